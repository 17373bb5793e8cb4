#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "tpn/local_net.hpp"
#include "tpn/sparse_model.hpp"
#include "tpn/temporal_product.hpp"

namespace tpn {

/// Binary layout, all integers u32 little-endian:
///   "TPN1" version n_tensors
///   per tensor: name_len name rank dims[rank] f32 values (row-major)
///   meta_len meta (key=value lines, sorted by key)
///   20-byte SHA-1 of "blob <n>\0" + everything above (n = its length)
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kContainerVersion = 1;

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  bool operator==(const Tensor&) const = default;
};

struct Container {
  std::vector<Tensor> tensors;  // stored in this order
  std::map<std::string, std::string> metadata;

  void add(std::string name, std::vector<std::uint32_t> dims, std::vector<float> data);
  const Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::string& meta(const std::string& key) const;

  bool operator==(const Container&) const = default;
};

std::vector<std::uint8_t> serialize(const Container& c);
Container deserialize(std::span<const std::uint8_t> bytes);

/// Hex SHA-1 as stored in the trailer of serialize(c).
std::string content_hash(const Container& c);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

// Model codecs. Values are stored as f32, so a loaded model equals the saved
// one rounded to float.
Container to_container(const DictionaryXd& dict);
Container to_container(const PsdModelXd& model);
Container to_container(const LocalNet& net);
Container to_container(const TpnModelXd& model);

using AnyModel = std::variant<DictionaryXd, PsdModelXd, LocalNet, TpnModelXd>;

/// Dispatches on the "model" metadata key: sc, psd, local, tpn.
AnyModel model_from_container(const Container& c);

DictionaryXd dictionary_from_container(const Container& c);
PsdModelXd psd_from_container(const Container& c);
LocalNet local_net_from_container(const Container& c);
TpnModelXd tpn_from_container(const Container& c);

}  // namespace tpn
