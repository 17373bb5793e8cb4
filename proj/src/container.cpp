#include "tpn/container.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace tpn {

static_assert(std::numeric_limits<float>::is_iec559, "container needs IEEE-754 floats");

namespace {

constexpr char kMagic[4] = {'T', 'P', 'N', '1'};
constexpr std::size_t kDigest = SHA_DIGEST_LENGTH;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_bytes(std::vector<std::uint8_t>& out, const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

std::array<std::uint8_t, kDigest> blob_sha1(std::span<const std::uint8_t> body) {
  const std::string header = "blob " + std::to_string(body.size()) + std::string(1, '\0');
  std::array<std::uint8_t, kDigest> d{};
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) &&
                  EVP_DigestUpdate(ctx, body.data(), body.size()) && EVP_DigestFinal_ex(ctx, d.data(), nullptr);
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-1 computation failed");
  return d;
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw FormatError("model container: truncated data");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

template <typename M>
std::vector<float> to_floats(const M& m) {
  // row-major
  std::vector<float> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(static_cast<float>(m(r, c)));
  return v;
}

void add_matrix(Container& c, const std::string& name, const Eigen::MatrixXd& m) {
  c.add(name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, to_floats(m));
}

void add_vector(Container& c, const std::string& name, const Eigen::VectorXd& v) {
  c.add(name, {static_cast<std::uint32_t>(v.size())}, to_floats(v));
}

void add_scalar(Container& c, const std::string& name, double v) { c.add(name, {1}, {static_cast<float>(v)}); }

Eigen::MatrixXd get_matrix(const Container& c, const std::string& name) {
  const Tensor& t = c.tensor(name);
  if (t.dims.size() != 2) throw FormatError("model container: tensor " + name + " is not a matrix");
  Eigen::MatrixXd m(t.dims[0], t.dims[1]);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index k = 0; k < m.cols(); ++k) m(r, k) = t.data[i++];
  return m;
}

Eigen::VectorXd get_vector(const Container& c, const std::string& name) {
  const Tensor& t = c.tensor(name);
  if (t.dims.size() != 1) throw FormatError("model container: tensor " + name + " is not a vector");
  Eigen::VectorXd v(t.dims[0]);
  for (std::size_t i = 0; i < t.data.size(); ++i) v(static_cast<Eigen::Index>(i)) = t.data[i];
  return v;
}

double get_scalar(const Container& c, const std::string& name) {
  const Tensor& t = c.tensor(name);
  if (t.data.size() != 1) throw FormatError("model container: tensor " + name + " is not a scalar");
  return t.data[0];
}

int meta_int(const Container& c, const std::string& key) {
  try {
    return std::stoi(c.meta(key));
  } catch (const std::logic_error&) {
    throw FormatError("model container: metadata " + key + " is not an integer");
  }
}

std::string flavor_name(EncoderFlavor f) { return f == EncoderFlavor::Tanh ? "tanh" : "double_tanh"; }

EncoderFlavor flavor_from(const std::string& s) {
  if (s == "tanh") return EncoderFlavor::Tanh;
  if (s == "double_tanh") return EncoderFlavor::DoubleTanh;
  throw FormatError("model container: unknown encoder flavor " + s);
}

void expect_model(const Container& c, const std::string& kind) {
  if (c.meta("model") != kind) throw FormatError("model container: expected a " + kind + " model, found " + c.meta("model"));
}

}  // namespace

void Container::add(std::string name, std::vector<std::uint32_t> dims, std::vector<float> data) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  require(n == data.size(), "Container::add: dims do not match data length");
  require(!has(name), "Container::add: duplicate tensor " + name);
  tensors.push_back({std::move(name), std::move(dims), std::move(data)});
}

bool Container::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const Tensor& t) { return t.name == name; });
}

const Tensor& Container::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw FormatError("model container: missing tensor " + name);
}

const std::string& Container::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw FormatError("model container: missing metadata " + key);
  return it->second;
}

std::vector<std::uint8_t> serialize(const Container& c) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    put_bytes(out, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    for (float v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  std::string meta;
  for (const auto& [k, v] : c.metadata) {
    require(k.find_first_of("=\n") == std::string::npos && v.find('\n') == std::string::npos,
            "serialize: metadata keys and values must be single-line (no '=' in keys)");
    meta += k + "=" + v + "\n";
  }
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  put_bytes(out, meta);
  const auto digest = blob_sha1(out);
  out.insert(out.end(), digest.begin(), digest.end());
  return out;
}

Container deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("model container: bad magic (not a TPN1 file)");
  if (bytes.size() < 12 + kDigest) throw FormatError("model container: truncated data");
  Reader head(bytes.subspan(4, 4));
  const std::uint32_t version = head.u32();
  if (version != kContainerVersion)
    throw FormatError("model container: unsupported format version " + std::to_string(version));
  const auto body = bytes.first(bytes.size() - kDigest);
  const auto digest = blob_sha1(body);
  if (std::memcmp(digest.data(), bytes.data() + body.size(), kDigest) != 0)
    throw FormatError("model container: checksum mismatch (file truncated or corrupt)");

  Reader r(body.subspan(8));
  Container c;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor t;
    t.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.u32());
      count *= t.dims.back();
    }
    if (count > r.remaining() / 4) throw FormatError("model container: tensor larger than file");
    t.data.resize(count);
    for (auto& v : t.data) v = r.f32();
    c.tensors.push_back(std::move(t));
  }
  std::istringstream meta(r.str(r.u32()));
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("model container: malformed metadata line");
    c.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (r.remaining() != 0) throw FormatError("model container: trailing bytes");
  return c;
}

std::string content_hash(const Container& c) {
  const auto bytes = serialize(c);
  std::ostringstream os;
  for (std::size_t i = bytes.size() - kDigest; i < bytes.size(); ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(bytes[i]);
  return os.str();
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = serialize(c);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

// -- models ---------------------------------------------------------------------

Container to_container(const DictionaryXd& dict) {
  Container c;
  c.metadata["model"] = "sc";
  add_matrix(c, "decoder", dict.columns);
  return c;
}

Container to_container(const PsdModelXd& model) {
  Container c;
  c.metadata["model"] = "psd";
  c.metadata["flavor"] = flavor_name(model.encoder.flavor);
  c.metadata["shared_notch"] = model.encoder.shared_notch ? "1" : "0";
  add_matrix(c, "decoder", model.dict.columns);
  add_matrix(c, "encoder.weights", model.encoder.weights);
  add_vector(c, "encoder.gain", model.encoder.gain);
  add_vector(c, "encoder.bias", model.encoder.bias);
  add_vector(c, "encoder.notch", model.encoder.notch);
  return c;
}

Container to_container(const LocalNet& net) {
  const auto& t = net.topology();
  Container c;
  c.metadata["model"] = "local";
  c.metadata["flavor"] = flavor_name(net.flavor());
  c.metadata["image_w"] = std::to_string(t.image_w);
  c.metadata["image_h"] = std::to_string(t.image_h);
  c.metadata["patch_w"] = std::to_string(t.patch_w);
  c.metadata["patch_h"] = std::to_string(t.patch_h);
  c.metadata["rho_x"] = std::to_string(t.rho_x.num) + "/" + std::to_string(t.rho_x.den);
  c.metadata["rho_y"] = std::to_string(t.rho_y.num) + "/" + std::to_string(t.rho_y.den);
  c.metadata["period_x"] = std::to_string(t.period_x);
  c.metadata["period_y"] = std::to_string(t.period_y);
  // slots in canonical order (tile slots row-major, then boundary units in raster order)
  std::vector<float> dec, enc, gain, bias;
  for (const auto& s : net.slots()) {
    for (double v : s.decoder) dec.push_back(static_cast<float>(v));
    for (double v : s.encoder) enc.push_back(static_cast<float>(v));
    gain.push_back(static_cast<float>(s.gain));
    bias.push_back(static_cast<float>(s.bias));
  }
  const auto ns = static_cast<std::uint32_t>(net.slots().size());
  const auto nw = static_cast<std::uint32_t>(dec.size());
  c.add("slots.decoder", {nw}, std::move(dec));
  c.add("slots.encoder", {nw}, std::move(enc));
  c.add("slots.gain", {ns}, std::move(gain));
  c.add("slots.bias", {ns}, std::move(bias));
  add_scalar(c, "notch", net.notch());
  return c;
}

Container to_container(const TpnModelXd& model) {
  Container c;
  c.metadata["model"] = "tpn";
  c.metadata["n_tau"] = std::to_string(model.n_tau);
  add_matrix(c, "dec1", model.dec1);
  add_matrix(c, "dec2", model.dec2);
  const std::pair<const char*, const TpnEncoder<double>*> encs[] = {{"enc1", &model.enc1}, {"enc2", &model.enc2}};
  for (const auto& [name, e] : encs) {
    const std::string n = name;
    add_matrix(c, n + ".weights", e->weights);
    add_vector(c, n + ".gain", e->gain);
    add_vector(c, n + ".bias", e->bias);
    add_scalar(c, n + ".notch", e->notch);
  }
  add_scalar(c, "alpha1", model.alpha1);
  add_scalar(c, "alpha2", model.alpha2);
  return c;
}

DictionaryXd dictionary_from_container(const Container& c) {
  expect_model(c, "sc");
  return DictionaryXd{get_matrix(c, "decoder")};
}

PsdModelXd psd_from_container(const Container& c) {
  expect_model(c, "psd");
  PsdModelXd m;
  m.dict.columns = get_matrix(c, "decoder");
  m.encoder.weights = get_matrix(c, "encoder.weights");
  m.encoder.gain = get_vector(c, "encoder.gain");
  m.encoder.bias = get_vector(c, "encoder.bias");
  m.encoder.notch = get_vector(c, "encoder.notch");
  m.encoder.flavor = flavor_from(c.meta("flavor"));
  m.encoder.shared_notch = c.meta("shared_notch") == "1";
  const auto nz = m.dict.n_z();
  if (m.encoder.n_z() != nz || m.encoder.n_x() != m.dict.n_x() || m.encoder.gain.size() != nz ||
      m.encoder.bias.size() != nz || m.encoder.notch.size() != nz)
    throw FormatError("model container: inconsistent PSD tensor shapes");
  return m;
}

LocalNet local_net_from_container(const Container& c) {
  expect_model(c, "local");
  auto density = [&](const std::string& key) {
    const std::string& s = c.meta(key);
    const auto slash = s.find('/');
    if (slash == std::string::npos) throw FormatError("model container: malformed density " + key);
    try {
      return Density{std::stoi(s.substr(0, slash)), std::stoi(s.substr(slash + 1))};
    } catch (const std::logic_error&) {
      throw FormatError("model container: malformed density " + key);
    }
  };
  LocalTopology t;
  t.image_w = meta_int(c, "image_w");
  t.image_h = meta_int(c, "image_h");
  t.patch_w = meta_int(c, "patch_w");
  t.patch_h = meta_int(c, "patch_h");
  t.rho_x = density("rho_x");
  t.rho_y = density("rho_y");
  t.period_x = meta_int(c, "period_x");
  t.period_y = meta_int(c, "period_y");
  try {
    t.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("model container: ") + e.what());
  }
  // Recover slot geometry from a throwaway layout of the same topology.
  Rng rng(0);
  const LocalNet shape = LocalNet::create(t, EncoderFlavor::DoubleTanh, rng);
  const Tensor& dec = c.tensor("slots.decoder");
  const Tensor& enc = c.tensor("slots.encoder");
  const Tensor& gain = c.tensor("slots.gain");
  const Tensor& bias = c.tensor("slots.bias");
  std::size_t total = 0;
  for (const auto& s : shape.slots()) total += static_cast<std::size_t>(s.width) * s.height;
  if (dec.data.size() != total || enc.data.size() != total || gain.data.size() != shape.slots().size() ||
      bias.data.size() != shape.slots().size())
    throw FormatError("model container: slot tensors do not match topology");
  std::vector<FilterSlot> slots = shape.slots();
  std::size_t off = 0;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    auto& s = slots[k];
    const auto n = static_cast<std::size_t>(s.width) * s.height;
    for (std::size_t i = 0; i < n; ++i) {
      s.decoder(static_cast<Eigen::Index>(i)) = dec.data[off + i];
      s.encoder(static_cast<Eigen::Index>(i)) = enc.data[off + i];
    }
    off += n;
    s.gain = gain.data[k];
    s.bias = bias.data[k];
  }
  return make_local_net(t, flavor_from(c.meta("flavor")), get_scalar(c, "notch"), std::move(slots));
}

TpnModelXd tpn_from_container(const Container& c) {
  expect_model(c, "tpn");
  TpnModelXd m;
  m.n_tau = meta_int(c, "n_tau");
  m.dec1 = get_matrix(c, "dec1");
  m.dec2 = get_matrix(c, "dec2");
  for (auto [name, e] : {std::pair{"enc1", &m.enc1}, std::pair{"enc2", &m.enc2}}) {
    const std::string n = name;
    e->weights = get_matrix(c, n + ".weights");
    e->gain = get_vector(c, n + ".gain");
    e->bias = get_vector(c, n + ".bias");
    e->notch = get_scalar(c, n + ".notch");
  }
  m.alpha1 = get_scalar(c, "alpha1");
  m.alpha2 = get_scalar(c, "alpha2");
  try {
    m.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("model container: ") + e.what());
  }
  return m;
}

AnyModel model_from_container(const Container& c) {
  const std::string& kind = c.meta("model");
  if (kind == "sc") return dictionary_from_container(c);
  if (kind == "psd") return psd_from_container(c);
  if (kind == "local") return local_net_from_container(c);
  if (kind == "tpn") return tpn_from_container(c);
  throw FormatError("model container: unknown model kind " + kind);
}

}  // namespace tpn
