#pragma once

#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrq/data.hpp"
#include "lrq/tensor_io.hpp"

// On-disk dataset: <dir>/manifest.json + <dir>/samples/<id>.lrqs.
//
// LRQS layout (little-endian): "LRQS", u32 version, u64 N, u32 task,
// u64 seed, f64 target, u8 closed_surface, u32 block count, then per block
// u16 name length, name bytes, u64 rows, u64 cols, rows·cols f64 values.
// Surface patches are stored as P×5 rows (index, n_x, n_y, n_z, ΔA) and
// volume cells as P×8 rows (index, ΔV, ε in Voigt order).

namespace lrq {

inline constexpr std::uint32_t kSampleFormatVersion = 1;
inline constexpr int kManifestVersion = 1;

namespace detail {

inline void write_block(std::ostream& os, const std::string& name, const Tensor& t) {
  io::write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  const std::size_t rows = t.rank() == 0 ? 1 : t.shape()[0];
  io::write_pod<std::uint64_t>(os, rows);
  io::write_pod<std::uint64_t>(os, rows == 0 ? 0 : t.numel() / rows);
  io::write_doubles(os, t.values());
}

inline bool present(const Tensor& t) { return t.rank() > 0; }

inline Tensor patches_block(const SurfacePatches& p) {
  Buffer b;
  for (std::size_t i = 0; i < p.size(); ++i) {
    b.push_back(double(p.index[i]));
    for (std::size_t a = 0; a < 3; ++a) b.push_back(p.normal.at(i, a));
    b.push_back(p.area[i]);
  }
  return Tensor({p.size(), 5}, std::move(b));
}

inline Tensor cells_block(const VolumeCells& c) {
  Buffer b;
  for (std::size_t i = 0; i < c.index.size(); ++i) {
    b.push_back(double(c.index[i]));
    b.push_back(c.volume[i]);
    for (std::size_t a = 0; a < 6; ++a) b.push_back(c.strain.at(i, a));
  }
  return Tensor({c.index.size(), 8}, std::move(b));
}

inline std::size_t as_index(double v, std::size_t n, const char* what) {
  if (!(v >= 0 && v < double(n)) || v != std::floor(v)) {
    throw DataError(std::string(what) + " references invalid point index");
  }
  return std::size_t(v);
}

}  // namespace detail

inline void write_sample(std::ostream& os, const Sample& s) {
  const std::size_t n = s.size();
  io::write_magic(os, "LRQS");
  io::write_pod<std::uint32_t>(os, kSampleFormatVersion);
  io::write_pod<std::uint64_t>(os, n);
  io::write_pod<std::uint32_t>(os, s.task == TaskKind::kFlow ? 0u : 1u);
  io::write_pod<std::uint64_t>(os, s.seed);
  io::write_pod<double>(os, s.target);
  io::write_pod<std::uint8_t>(os, s.closed_surface ? 1 : 0);
  std::vector<std::pair<std::string, Tensor>> blocks{{"coords", s.coords}, {"d", s.design}};
  const std::pair<const char*, const Tensor*> optional[] = {{"v", &s.fields.v},      {"p", &s.fields.p},
                                                            {"T", &s.fields.T},      {"sigma", &s.fields.sigma},
                                                            {"vm", &s.von_mises},    {"body_force", &s.body_force}};
  for (const auto& [name, t] : optional)
    if (detail::present(*t)) blocks.emplace_back(name, *t);
  blocks.emplace_back("patches", detail::patches_block(s.patches));
  blocks.emplace_back("cells", detail::cells_block(s.cells));
  io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& [name, t] : blocks) detail::write_block(os, name, t);
}

inline Sample read_sample(std::istream& is) {
  io::expect_magic(is, "LRQS");
  const auto version = io::read_pod<std::uint32_t>(is, "sample version");
  if (version != kSampleFormatVersion) {
    throw DataError("unsupported sample format version " + std::to_string(version) + " (expected " +
                    std::to_string(kSampleFormatVersion) + ")");
  }
  Sample s;
  const auto n = io::read_pod<std::uint64_t>(is, "point count");
  const auto task = io::read_pod<std::uint32_t>(is, "task");
  if (task > 1) throw DataError("unknown task code " + std::to_string(task));
  s.task = task == 0 ? TaskKind::kFlow : TaskKind::kBeam;
  s.seed = io::read_pod<std::uint64_t>(is, "seed");
  s.target = io::read_pod<double>(is, "target");
  s.closed_surface = io::read_pod<std::uint8_t>(is, "closed flag") != 0;
  const auto count = io::read_pod<std::uint32_t>(is, "block count");
  if (count > 64) throw DataError("implausible block count " + std::to_string(count));
  Tensor patches, cells;
  for (std::uint32_t b = 0; b < count; ++b) {
    const auto len = io::read_pod<std::uint16_t>(is, "block name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (is.gcount() != len) throw DataError("truncated input while reading block name");
    const auto rows = io::read_pod<std::uint64_t>(is, "block rows");
    const auto cols = io::read_pod<std::uint64_t>(is, "block cols");
    if (rows > (1ull << 32) || cols > 64) throw DataError("block '" + name + "' has implausible extents");
    Buffer data(rows * cols);
    io::read_doubles(is, data, name.c_str());
    const bool vec = name == "d" || name == "vm";
    Tensor t = vec ? Tensor({rows}, std::move(data)) : Tensor({rows, cols}, std::move(data));
    if (name == "coords") s.coords = t;
    else if (name == "d") s.design = t;
    else if (name == "v") s.fields.v = t;
    else if (name == "p") s.fields.p = t;
    else if (name == "T") s.fields.T = t;
    else if (name == "sigma") s.fields.sigma = t;
    else if (name == "vm") s.von_mises = t;
    else if (name == "body_force") s.body_force = t;
    else if (name == "patches") patches = t;
    else if (name == "cells") cells = t;
    else throw DataError("unknown sample block '" + name + "'");
  }
  if (!detail::present(s.coords) || s.coords.rows() != n) throw DataError("sample coords block missing or wrong size");
  if (!detail::present(s.design)) throw DataError("sample design block missing");
  if (detail::present(patches) && patches.rows() > 0) {
    const std::size_t p = patches.rows();
    Buffer nrm(p * 3), area(p);
    for (std::size_t i = 0; i < p; ++i) {
      s.patches.index.push_back(detail::as_index(patches.at(i, 0), n, "surface patch"));
      for (std::size_t a = 0; a < 3; ++a) nrm[i * 3 + a] = patches.at(i, 1 + a);
      area[i] = patches.at(i, 4);
    }
    s.patches.normal = Tensor({p, 3}, std::move(nrm));
    s.patches.area = Tensor({p, 1}, std::move(area));
  }
  if (detail::present(cells) && cells.rows() > 0) {
    const std::size_t p = cells.rows();
    Buffer vol(p), eps(p * 6);
    for (std::size_t i = 0; i < p; ++i) {
      s.cells.index.push_back(detail::as_index(cells.at(i, 0), n, "volume cell"));
      vol[i] = cells.at(i, 1);
      for (std::size_t a = 0; a < 6; ++a) eps[i * 6 + a] = cells.at(i, 2 + a);
    }
    s.cells.volume = Tensor({p, 1}, std::move(vol));
    s.cells.strain = Tensor({p, 6}, std::move(eps));
  }
  return s;
}

inline std::string sample_bytes(const Sample& s) {
  std::ostringstream os(std::ios::binary);
  write_sample(os, s);
  return os.str();
}

inline std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

struct Splits {
  std::vector<std::size_t> train, valid, test;
};

/// Seeded 70/15/15 assignment; ids inside each split are sorted.
inline Splits assign_splits(std::size_t count, std::uint64_t seed, double train_frac = 0.70, double valid_frac = 0.15) {
  std::vector<std::size_t> ids(count);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed ^ 0x5eed5eedULL);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = std::size_t(std::llround(train_frac * double(count)));
  const auto n_valid = std::min(count - n_train, std::size_t(std::llround(valid_frac * double(count))));
  Splits s;
  s.train.assign(ids.begin(), ids.begin() + std::ptrdiff_t(n_train));
  s.valid.assign(ids.begin() + std::ptrdiff_t(n_train), ids.begin() + std::ptrdiff_t(n_train + n_valid));
  s.test.assign(ids.begin() + std::ptrdiff_t(n_train + n_valid), ids.end());
  for (auto* v : {&s.train, &s.valid, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

struct SampleEntry {
  std::string file;
  std::uint32_t crc32 = 0;
  std::uint64_t bytes = 0;
};

struct DatasetManifest {
  int version = kManifestVersion;
  TaskKind task = TaskKind::kFlow;
  std::size_t count = 0;
  std::size_t d_in = 0;
  std::size_t points_per_sample = 0;
  std::uint64_t seed = 0;
  Normalizer design_stats, target_stats, field_stats;
  Splits splits;
  std::vector<SampleEntry> samples;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;

  std::vector<const Sample*> split(const std::string& name) const {
    const auto& ids = name == "train" ? manifest.splits.train
                      : name == "valid" ? manifest.splits.valid
                      : name == "test"  ? manifest.splits.test
                                        : throw ConfigError("unknown split '" + name + "'");
    std::vector<const Sample*> out;
    for (std::size_t i : ids) out.push_back(&samples.at(i));
    return out;
  }
};

/// Normalization stats from the train split only.
inline void fit_stats(Dataset& ds) {
  std::vector<const Tensor*> designs;
  std::vector<double> targets, fields;
  std::size_t cols = 0;
  for (std::size_t i : ds.manifest.splits.train) {
    const Sample& s = ds.samples[i];
    designs.push_back(&s.design);
    targets.push_back(s.target);
    const Tensor f = s.point_targets();
    cols = f.cols();
    fields.insert(fields.end(), f.values().begin(), f.values().end());
  }
  ds.manifest.design_stats = Normalizer::fit(designs);
  ds.manifest.target_stats = Normalizer::fit_rows(targets, 1);
  ds.manifest.field_stats = Normalizer::fit_rows(fields, cols);
}

/// Seeded dataset: per-sample parameters and point sets drawn from
/// independent streams so sample i does not depend on the count.
inline Dataset generate_dataset(TaskKind task, std::size_t count, std::size_t n_points, std::uint64_t seed) {
  if (count == 0) throw ConfigError("dataset count must be positive");
  require_points(n_points);
  Dataset ds;
  auto& m = ds.manifest;
  m.task = task;
  m.count = count;
  m.d_in = design_dim(task);
  m.points_per_sample = n_points;
  m.seed = seed;
  for (std::size_t i = 0; i < count; ++i) {
    std::seed_seq seq{std::uint64_t(seed), std::uint64_t(i), std::uint64_t(0x1a2b3c)};
    Rng rng(seq);
    const std::uint64_t point_seed = rng();
    ds.samples.push_back(task == TaskKind::kFlow ? gen_flow_sample(random_flow_params(rng), n_points, point_seed)
                                                 : gen_beam_sample(random_beam_params(rng), n_points, point_seed));
  }
  m.splits = count >= 3 ? assign_splits(count, seed) : Splits{std::vector<std::size_t>(count), {}, {}};
  if (count < 3) std::iota(m.splits.train.begin(), m.splits.train.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string bytes = sample_bytes(ds.samples[i]);
    m.samples.push_back({"samples/" + std::to_string(i) + ".lrqs", crc32_of(bytes), bytes.size()});
  }
  fit_stats(ds);
  return ds;
}

inline nlohmann::json to_json(const Normalizer& n) { return {{"mean", n.mean}, {"std", n.std}}; }

inline Normalizer normalizer_from_json(const nlohmann::json& j) {
  Normalizer n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.std = j.at("std").get<std::vector<double>>();
  if (n.mean.size() != n.std.size()) throw DataError("normalization stats have mismatched lengths");
  return n;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < m.samples.size(); ++i)
    files.push_back({{"id", i}, {"file", m.samples[i].file}, {"crc32", m.samples[i].crc32}, {"bytes", m.samples[i].bytes}});
  return {{"format", "lrq-dataset"},
          {"version", m.version},
          {"task", to_string(m.task)},
          {"count", m.count},
          {"d_in", m.d_in},
          {"points_per_sample", m.points_per_sample},
          {"seed", m.seed},
          {"design_stats", to_json(m.design_stats)},
          {"target_stats", to_json(m.target_stats)},
          {"field_stats", to_json(m.field_stats)},
          {"splits", {{"train", m.splits.train}, {"valid", m.splits.valid}, {"test", m.splits.test}}},
          {"samples", files}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion) {
      throw DataError("unsupported manifest version " + std::to_string(m.version) + " (expected " +
                      std::to_string(kManifestVersion) + ")");
    }
    m.task = parse_task(j.at("task").get<std::string>());
    m.count = j.at("count").get<std::size_t>();
    m.d_in = j.at("d_in").get<std::size_t>();
    m.points_per_sample = j.at("points_per_sample").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.design_stats = normalizer_from_json(j.at("design_stats"));
    m.target_stats = normalizer_from_json(j.at("target_stats"));
    m.field_stats = normalizer_from_json(j.at("field_stats"));
    const auto& sp = j.at("splits");
    m.splits = {sp.at("train").get<std::vector<std::size_t>>(), sp.at("valid").get<std::vector<std::size_t>>(),
                sp.at("test").get<std::vector<std::size_t>>()};
    for (const auto& f : j.at("samples"))
      m.samples.push_back({f.at("file").get<std::string>(), f.at("crc32").get<std::uint32_t>(), f.at("bytes").get<std::uint64_t>()});
    if (m.samples.size() != m.count) throw DataError("manifest lists " + std::to_string(m.samples.size()) + " files for " + std::to_string(m.count) + " samples");
    std::vector<int> seen(m.count, 0);
    for (const auto* v : {&m.splits.train, &m.splits.valid, &m.splits.test})
      for (std::size_t i : *v) {
        if (i >= m.count || seen[i]++) throw DataError("manifest splits are not a partition of the samples");
      }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw DataError("manifest splits do not cover every sample");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + p.string());
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  for (std::size_t i = 0; i < ds.samples.size(); ++i) write_file(dir / ds.manifest.samples[i].file, sample_bytes(ds.samples[i]));
  write_file(dir / "manifest.json", to_json(ds.manifest).dump(2) + "\n");
}

inline DatasetManifest load_manifest(const std::filesystem::path& dir) {
  const std::string text = read_file(dir / "manifest.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

inline Sample load_sample_file(const std::filesystem::path& p) {
  std::istringstream is(read_file(p), std::ios::binary);
  return read_sample(is);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.manifest = load_manifest(dir);
  for (const auto& e : ds.manifest.samples) {
    const auto path = dir / e.file;
    const std::string bytes = read_file(path);
    if (bytes.size() != e.bytes) {
      throw DataError("size mismatch for " + path.string() + ": " + std::to_string(bytes.size()) + " bytes, manifest says " + std::to_string(e.bytes));
    }
    if (crc32_of(bytes) != e.crc32) throw DataError("checksum mismatch for " + path.string());
    std::istringstream is(bytes, std::ios::binary);
    Sample s = read_sample(is);
    if (s.task != ds.manifest.task || s.design.numel() != ds.manifest.d_in) {
      throw DataError(path.string() + " does not match the manifest task or D_in");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace lrq
