#pragma once

// Model checkpoints: model.json (shape and provenance) next to model.bin, a
// flat array of little-endian float64 values in declaration order (encoder
// layers first, each weight then bias, then the classifier). Centers, when
// present, go to centers.bin in the same encoding.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "crl/error.hpp"
#include "crl/losses.hpp"
#include "crl/model.hpp"
#include "json.hpp"

namespace crl {

namespace fs = std::filesystem;

struct CheckpointInfo {
  std::vector<std::size_t> layer_sizes;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::string defense;
  bool has_centers = false;
};

namespace detail {

inline void append_f64le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xFFu));
    bits >>= 8;
  }
}

inline double read_f64le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// Writes bytes to path via a temporary sibling and a rename.
inline void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::Io, "failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string serialize_params(const ModelParams& params) {
  std::string out;
  out.reserve(params.parameter_count() * 8);
  auto layer = [&out](const DenseLayer& l) {
    for (double v : l.weight.data()) detail::append_f64le(out, v);
    for (double v : l.bias) detail::append_f64le(out, v);
  };
  for (const auto& l : params.encoder) layer(l);
  layer(params.classifier);
  return out;
}

inline ModelParams deserialize_params(const std::vector<std::size_t>& layer_sizes, const std::string& bytes) {
  ModelParams params = init_model(layer_sizes, 0);
  require(bytes.size() == params.parameter_count() * 8, ErrorKind::Parse,
          "model.bin holds " + std::to_string(bytes.size()) + " bytes, expected " +
              std::to_string(params.parameter_count() * 8));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  auto layer = [&p](DenseLayer& l) {
    for (double& v : l.weight.data()) v = detail::read_f64le(p), p += 8;
    for (double& v : l.bias) v = detail::read_f64le(p), p += 8;
  };
  for (auto& l : params.encoder) layer(l);
  layer(params.classifier);
  return params;
}

inline std::string serialize_matrix(const Matrix& m) {
  std::string out;
  out.reserve(m.size() * 8);
  for (double v : m.data()) detail::append_f64le(out, v);
  return out;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

/// Hash over model.bin followed by centers.bin (if any).
inline std::string checkpoint_hash(const ModelParams& params, const CenterBank& centers) {
  std::uint64_t h = fnv1a(serialize_params(params));
  if (centers.centers.size() > 0) h = fnv1a(serialize_matrix(centers.centers), h);
  return hex64(h);
}

inline void save_checkpoint(const fs::path& dir, const ModelParams& params, const CenterBank& centers,
                            const CheckpointInfo& info) {
  nlohmann::json j;
  j["layer_sizes"] = params.layer_sizes();
  j["seed"] = info.seed;
  j["epoch"] = info.epoch;
  j["defense"] = info.defense;
  j["encoding"] = "float64-le";
  j["parameter_count"] = params.parameter_count();
  const bool has_centers = centers.centers.size() > 0;
  if (has_centers) {
    j["centers"] = {{"rows", centers.centers.rows()}, {"cols", centers.centers.cols()}, {"center_lr", centers.center_lr}};
    write_atomic(dir / "centers.bin", serialize_matrix(centers.centers));
  }
  write_atomic(dir / "model.bin", serialize_params(params));
  write_atomic(dir / "model.json", j.dump(2) + "\n");
}

struct Checkpoint {
  CheckpointInfo info;
  ModelParams params;
  CenterBank centers;
};

inline Checkpoint load_checkpoint(const fs::path& dir) {
  require(fs::exists(dir / "model.json") && fs::exists(dir / "model.bin"), ErrorKind::Config,
          "no checkpoint in " + dir.string() + " (model.json/model.bin missing)");
  Checkpoint ck;
  try {
    const auto j = nlohmann::json::parse(detail::read_file(dir / "model.json"));
    ck.info.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    ck.info.seed = j.at("seed").get<std::uint64_t>();
    ck.info.epoch = j.at("epoch").get<int>();
    ck.info.defense = j.at("defense").get<std::string>();
    if (j.contains("centers")) {
      const auto& c = j.at("centers");
      const auto rows = c.at("rows").get<std::size_t>();
      const auto cols = c.at("cols").get<std::size_t>();
      const std::string bytes = detail::read_file(dir / "centers.bin");
      require(bytes.size() == rows * cols * 8, ErrorKind::Parse, "centers.bin size does not match model.json");
      ck.centers = CenterBank{Matrix(rows, cols), c.at("center_lr").get<double>()};
      const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
      for (double& v : ck.centers.centers.data()) v = detail::read_f64le(p), p += 8;
      ck.info.has_centers = true;
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, (dir / "model.json").string() + ": " + e.what());
  }
  ck.params = deserialize_params(ck.info.layer_sizes, detail::read_file(dir / "model.bin"));
  return ck;
}

}  // namespace crl
