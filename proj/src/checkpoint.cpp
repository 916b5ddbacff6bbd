#include "neurofuse/cnn/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <fmt/format.h>
#include <json.hpp>

#include "neurofuse/nifti.hpp"

namespace neurofuse::cnn {

namespace {

constexpr char kMagic[8] = {'N', 'F', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void append(std::vector<std::uint8_t>& out, T v) {
  const auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(to_little(v));
  out.insert(out.end(), bytes.begin(), bytes.end());
}

template <typename T>
T read_at(const std::vector<std::uint8_t>& in, std::size_t pos) {
  std::array<std::uint8_t, sizeof(T)> bytes;
  std::memcpy(bytes.data(), in.data() + pos, sizeof(T));
  return to_little(std::bit_cast<T>(bytes));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net, const CheckpointInfo& info) {
  const NetworkSpec& s = net.spec();
  nlohmann::ordered_json h;
  h["format"] = "neurofuse-checkpoint";
  h["architecture"] = architecture_name(s.architecture);
  h["input_dims"] = s.input_dims;
  h["classes"] = s.classes();
  h["seed"] = info.seed;
  h["epoch"] = info.epoch;
  h["modality"] = info.modality;
  h["parameter_count"] = net.parameter_count();
  h["dtype"] = "float32le";
  nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
  for (const auto& b : net.blocks()) blocks.push_back({{"name", b.name}, {"size", b.size}});
  h["blocks"] = blocks;
  const std::string header = h.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  append<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + 4 * static_cast<std::size_t>(net.parameter_count()));
  for (Eigen::Index i = 0; i < net.parameter_count(); ++i) append<float>(out, net.parameters()[i]);
  write_file(path, std::span<const std::uint8_t>(out));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw Error(ErrorCode::BadMagic, fmt::format("{} is not a neurofuse checkpoint", path.string()));
  }
  const auto header_len = read_at<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) throw Error(ErrorCode::TruncatedData, "checkpoint header is truncated");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("checkpoint header: {}", e.what()));
  }
  NetworkSpec spec;
  CheckpointInfo info;
  try {
    const Dims dims = h.at("input_dims").get<Dims>();
    const int classes = h.at("classes").get<int>();
    const Architecture arch = parse_architecture(h.at("architecture").get<std::string>());
    spec = arch == Architecture::Fusion ? build_fusion(dims, classes) : build_single_modality(dims, classes);
    info.seed = h.at("seed").get<std::uint64_t>();
    info.epoch = h.at("epoch").get<int>();
    info.modality = h.at("modality").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("checkpoint header: {}", e.what()));
  }
  Network<float> net(spec);
  const std::size_t start = 16 + header_len;
  const std::size_t need = 4 * static_cast<std::size_t>(net.parameter_count());
  if (h.value("parameter_count", std::int64_t{-1}) != net.parameter_count()) {
    throw Error(ErrorCode::ParseError, "checkpoint parameter count does not match its architecture");
  }
  if (bytes.size() - start != need) {
    throw Error(ErrorCode::TruncatedData,
                fmt::format("checkpoint holds {} parameter bytes, expected {}", bytes.size() - start, need));
  }
  for (Eigen::Index i = 0; i < net.parameter_count(); ++i) {
    net.parameters()[i] = read_at<float>(bytes, start + 4 * static_cast<std::size_t>(i));
  }
  return {std::move(net), info};
}

}  // namespace neurofuse::cnn
