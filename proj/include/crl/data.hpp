#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crl/error.hpp"
#include "crl/numerics.hpp"

namespace crl {

struct Dataset {
  Matrix x;
  std::vector<int> y;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return y.size(); }
  std::size_t dim() const noexcept { return x.cols(); }

  void validate() const {
    require(x.rows() == y.size(), ErrorKind::InvalidInput, "feature rows and label count differ");
    require(num_classes >= 2, ErrorKind::InvalidInput, "dataset needs at least 2 classes");
    for (int label : y)
      require(label >= 0 && static_cast<std::size_t>(label) < num_classes, ErrorKind::Label,
              "label " + std::to_string(label) + " outside [0," + std::to_string(num_classes) + ")");
    require(all_finite(x.data()), ErrorKind::InvalidInput, "non-finite feature value");
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out{Matrix(indices.size(), dim()), std::vector<int>(indices.size()), num_classes};
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto src = x.row(indices[i]);
      std::copy(src.begin(), src.end(), out.x.row(i).begin());
      out.y[i] = y[indices[i]];
    }
    return out;
  }
};

struct BlobSpec {
  std::uint64_t seed = 0;
  std::size_t n = 2000;
  std::size_t dim = 20;
  std::size_t classes = 5;
  double separation = 3.0;
  double label_noise = 0.2;
};

/// Class means for gen_blobs, all pairwise >= separation / 2 apart. With
/// classes <= dim they are separation * (random orthonormal frame), i.e.
/// sqrt(2) * separation apart; otherwise random unit directions are
/// rejection-sampled, falling back to evenly spaced points on a random line.
inline Matrix blob_means(const BlobSpec& spec, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t c = spec.classes;
  const std::size_t d = spec.dim;
  Matrix means(c, d);
  auto random_unit = [&](std::span<double> out) {
    double norm = 0.0;
    do {
      for (double& v : out) v = normal(rng);
      norm = l2_norm(out);
    } while (norm < 1e-12);
    for (double& v : out) v /= norm;
  };

  if (c <= d) {
    for (std::size_t i = 0; i < c; ++i) {
      auto row = means.row(i);
      while (true) {
        random_unit(row);
        for (std::size_t j = 0; j < i; ++j) {
          const double proj = dot(row, means.row(j));
          for (std::size_t k = 0; k < d; ++k) row[k] -= proj * means(j, k);
        }
        const double norm = l2_norm(row);
        if (norm > 1e-6) {
          for (double& v : row) v /= norm;
          break;
        }
      }
    }
  } else {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      placed = true;
      for (std::size_t i = 0; i < c && placed; ++i) {
        random_unit(means.row(i));
        for (std::size_t j = 0; j < i; ++j)
          if (dot(means.row(i), means.row(j)) > 7.0 / 8.0) {
            placed = false;
            break;
          }
      }
    }
    if (!placed) {
      Vector dir(d);
      random_unit(dir);
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t k = 0; k < d; ++k) means(i, k) = static_cast<double>(i) * dir[k];
    }
  }
  for (double& v : means.data()) v *= spec.separation;
  return means;
}

/// Gaussian blobs with unit covariance. Sample i belongs to class i mod C
/// before noise; then round(label_noise * N) samples get a uniformly random
/// label.
inline Dataset gen_blobs(const BlobSpec& spec) {
  require(spec.classes >= 2, ErrorKind::Config, "need at least 2 classes");
  require(spec.dim >= 1, ErrorKind::Config, "need at least 1 feature");
  require(spec.n >= 2 * spec.classes, ErrorKind::Config, "need n >= 2 * classes");
  require(spec.separation > 0.0 && std::isfinite(spec.separation), ErrorKind::Config, "separation must be > 0");
  require(spec.label_noise >= 0.0 && spec.label_noise < 1.0, ErrorKind::Config, "label_noise must be in [0,1)");

  std::mt19937_64 rng(spec.seed);
  const Matrix means = blob_means(spec, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds{Matrix(spec.n, spec.dim), std::vector<int>(spec.n), spec.classes};
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto cls = i % spec.classes;
    ds.y[i] = static_cast<int>(cls);
    auto row = ds.x.row(i);
    for (std::size_t k = 0; k < spec.dim; ++k) row[k] = means(cls, k) + normal(rng);
  }

  const auto n_noisy = static_cast<std::size_t>(std::llround(spec.label_noise * static_cast<double>(spec.n)));
  std::vector<std::size_t> order(spec.n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<int> any_class(0, static_cast<int>(spec.classes) - 1);
  for (std::size_t i = 0; i < n_noisy; ++i) ds.y[order[i]] = any_class(rng);
  return ds;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_number(const std::string& cell, std::size_t line_no, std::size_t col) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  std::size_t rest = used;
  while (rest < cell.size() && std::isspace(static_cast<unsigned char>(cell[rest]))) ++rest;
  if (used == 0 || rest != cell.size() || !std::isfinite(v))
    fail(ErrorKind::Parse, "line " + std::to_string(line_no) + ", column " + std::to_string(col + 1) +
                               ": not a finite number: '" + cell + "'");
  return v;
}

}  // namespace detail

/// Reads `f0,...,f{d-1},label`. Labels are densified to 0..C-1 in ascending
/// order of their original numeric values.
inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open " + path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Parse, path + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  require(header.size() >= 2 && header.back() == "label", ErrorKind::Parse,
          path + ": line 1: header must be f0,...,f{d-1},label");
  const std::size_t d = header.size() - 1;
  for (std::size_t k = 0; k < d; ++k)
    require(header[k] == "f" + std::to_string(k), ErrorKind::Parse,
            path + ": line 1: expected column 'f" + std::to_string(k) + "', found '" + header[k] + "'");

  Vector values;
  std::vector<double> raw_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    require(cells.size() == d + 1, ErrorKind::Parse,
            path + ": line " + std::to_string(line_no) + ": expected " + std::to_string(d + 1) + " columns, found " +
                std::to_string(cells.size()));
    for (std::size_t k = 0; k < d; ++k) values.push_back(detail::parse_number(cells[k], line_no, k));
    raw_labels.push_back(detail::parse_number(cells[d], line_no, d));
  }
  require(!raw_labels.empty(), ErrorKind::Parse, path + ": no data rows");

  std::map<double, int> dense;
  for (double l : raw_labels) dense.emplace(l, 0);
  int next = 0;
  for (auto& [raw, id] : dense) id = next++;

  Dataset ds{Matrix(raw_labels.size(), d, std::move(values)), std::vector<int>(raw_labels.size()), dense.size()};
  for (std::size_t i = 0; i < raw_labels.size(); ++i) ds.y[i] = dense.at(raw_labels[i]);
  return ds;
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot write " + path);
  for (std::size_t k = 0; k < ds.dim(); ++k) out << 'f' << k << ',';
  out << "label\n";
  out.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.x.row(i)) out << v << ',';
    out << ds.y[i] << '\n';
  }
  require(out.good(), ErrorKind::Io, "failed writing " + path);
}

struct TrainTestIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  bool operator==(const TrainTestIndices&) const = default;
};

/// Target/shadow partition plus one train/test split of the shadow pool per
/// shadow model.
struct SplitPlan {
  std::uint64_t base_seed = 0;
  std::size_t dataset_size = 0;
  std::vector<std::size_t> target_pool;
  std::vector<std::size_t> shadow_pool;
  TrainTestIndices target;
  std::vector<TrainTestIndices> shadows;
  std::vector<std::uint64_t> shadow_seeds;

  bool operator==(const SplitPlan&) const = default;
};

namespace detail {

// Pool halves; the train side takes the extra element of an odd pool.
inline TrainTestIndices halve(std::span<const std::size_t> pool) {
  const std::size_t n_train = (pool.size() + 1) / 2;
  return {{pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train)},
          {pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end()}};
}

// Distinct streams for the target partition and for each shadow, so shadow 0
// (seed base_seed + 0) does not reuse the target permutation stream.
inline std::mt19937_64 split_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// Seeded 50/50 target/shadow partition; the target pool is halved into
/// train/test; shadow i re-permutes the shadow pool with seed base_seed + i.
inline SplitPlan make_split(std::size_t n, std::uint64_t base_seed, std::size_t n_shadow) {
  require(n >= 4, ErrorKind::InvalidInput, "split needs at least 4 samples");
  SplitPlan plan;
  plan.base_seed = base_seed;
  plan.dataset_size = n;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = detail::split_rng(base_seed, 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t n_target = (n + 1) / 2;
  plan.target_pool.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_target));
  plan.shadow_pool.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_target), perm.end());
  plan.target = detail::halve(plan.target_pool);

  for (std::size_t i = 0; i < n_shadow; ++i) {
    const std::uint64_t seed = base_seed + i;
    std::vector<std::size_t> pool = plan.shadow_pool;
    auto shadow_rng = detail::split_rng(seed, 1);
    std::shuffle(pool.begin(), pool.end(), shadow_rng);
    plan.shadows.push_back(detail::halve(pool));
    plan.shadow_seeds.push_back(seed);
  }
  return plan;
}

inline nlohmann::json split_to_json(const SplitPlan& plan) {
  nlohmann::json j;
  j["base_seed"] = plan.base_seed;
  j["dataset_size"] = plan.dataset_size;
  j["target_pool"] = plan.target_pool;
  j["shadow_pool"] = plan.shadow_pool;
  j["target"] = {{"train", plan.target.train}, {"test", plan.target.test}};
  j["shadows"] = nlohmann::json::array();
  for (std::size_t i = 0; i < plan.shadows.size(); ++i)
    j["shadows"].push_back(
        {{"seed", plan.shadow_seeds[i]}, {"train", plan.shadows[i].train}, {"test", plan.shadows[i].test}});
  return j;
}

inline SplitPlan split_from_json(const nlohmann::json& j) {
  try {
    SplitPlan plan;
    plan.base_seed = j.at("base_seed").get<std::uint64_t>();
    plan.dataset_size = j.at("dataset_size").get<std::size_t>();
    plan.target_pool = j.at("target_pool").get<std::vector<std::size_t>>();
    plan.shadow_pool = j.at("shadow_pool").get<std::vector<std::size_t>>();
    plan.target.train = j.at("target").at("train").get<std::vector<std::size_t>>();
    plan.target.test = j.at("target").at("test").get<std::vector<std::size_t>>();
    for (const auto& s : j.at("shadows")) {
      plan.shadow_seeds.push_back(s.at("seed").get<std::uint64_t>());
      plan.shadows.push_back({s.at("train").get<std::vector<std::size_t>>(), s.at("test").get<std::vector<std::size_t>>()});
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("split plan: ") + e.what());
  }
}

/// Per-dimension z-scoring with statistics fitted on one subset.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const Dataset& ds, std::span<const std::size_t> rows) {
    require(!rows.empty(), ErrorKind::InvalidInput, "cannot fit a standardizer on zero rows");
    const std::size_t d = ds.dim();
    Standardizer s{Vector(d, 0.0), Vector(d, 0.0)};
    for (std::size_t r : rows)
      for (std::size_t k = 0; k < d; ++k) s.mean[k] += ds.x(r, k);
    for (double& m : s.mean) m /= static_cast<double>(rows.size());
    for (std::size_t r : rows)
      for (std::size_t k = 0; k < d; ++k) {
        const double dv = ds.x(r, k) - s.mean[k];
        s.scale[k] += dv * dv;
      }
    for (double& v : s.scale) {
      v = std::sqrt(v / static_cast<double>(rows.size()));
      if (v < 1e-12) v = 1.0;
    }
    return s;
  }

  Dataset apply(Dataset ds) const {
    for (std::size_t r = 0; r < ds.size(); ++r) {
      auto row = ds.x.row(r);
      for (std::size_t k = 0; k < row.size(); ++k) row[k] = (row[k] - mean[k]) / scale[k];
    }
    return ds;
  }
};

}  // namespace crl
