#pragma once

#include <filesystem>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lrq/tensor_io.hpp"
#include "lrq/train.hpp"

// LRQC checkpoint: "LRQC", u32 version, u64 header length, JSON header
// (parameter names and shapes, model/train config, data stats, epoch, RNG
// state, optimizer step, history), then one LRQT block per parameter followed
// by the first and second moments in the same order.

namespace lrq {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainState state;
  TrainConfig config;
};

inline std::string checkpoint_bytes(const TrainState& st, const TrainConfig& cfg) {
  LrqModel model = st.model;
  const ParamRefs refs = model.params();
  if (st.opt.m.size() != refs.size() || st.opt.v.size() != refs.size()) {
    throw DimensionError("optimizer state does not match the parameter list");
  }
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, t] : refs) names.push_back({{"name", name}, {"shape", t->shape()}});
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : st.history) history.push_back(to_json(r));
  const nlohmann::json header = {{"format", "lrq-checkpoint"},
                                 {"params", names},
                                 {"model", to_json(st.model.cfg)},
                                 {"train", to_json(cfg)},
                                 {"data", to_json(st.stats)},
                                 {"epoch", st.epoch},
                                 {"rng", rng_state(st.shuffle_rng)},
                                 {"opt_step", st.opt.step},
                                 {"history", history}};
  const std::string js = header.dump();
  std::ostringstream os(std::ios::binary);
  io::write_magic(os, "LRQC");
  io::write_pod<std::uint32_t>(os, kCheckpointVersion);
  io::write_pod<std::uint64_t>(os, js.size());
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (const auto& [name, t] : refs) io::write_tensor(os, *t);
  for (const auto& t : st.opt.m) io::write_tensor(os, t);
  for (const auto& t : st.opt.v) io::write_tensor(os, t);
  return os.str();
}

inline Checkpoint checkpoint_from_bytes(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::expect_magic(is, "LRQC");
  const auto version = io::read_pod<std::uint32_t>(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const auto len = io::read_pod<std::uint64_t>(is, "checkpoint header length");
  if (len > bytes.size()) throw DataError("truncated checkpoint header");
  std::string js(len, '\0');
  is.read(js.data(), static_cast<std::streamsize>(len));
  if (is.gcount() != static_cast<std::streamsize>(len)) throw DataError("truncated checkpoint header");

  Checkpoint ck;
  try {
    const auto h = nlohmann::json::parse(js);
    ck.config = train_config_from_json(h.at("train"));
    const ModelConfig mc = model_config_from_json(h.at("model"));
    Rng scratch(0);
    ck.state.model = LrqModel::init(mc, scratch);  // shapes only; values are read below
    ck.state.stats = data_stats_from_json(h.at("data"));
    ck.state.epoch = h.at("epoch").get<std::size_t>();
    ck.state.shuffle_rng = rng_from_state(h.at("rng").get<std::string>());
    ck.state.opt.step = h.at("opt_step").get<std::uint64_t>();
    for (const auto& r : h.at("history")) ck.state.history.push_back(epoch_record_from_json(r));

    ParamRefs refs = ck.state.model.params();
    const auto& listed = h.at("params");
    if (listed.size() != refs.size()) {
      throw DataError("checkpoint lists " + std::to_string(listed.size()) + " parameters, model has " +
                      std::to_string(refs.size()));
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto name = listed[i].at("name").get<std::string>();
      const auto shape = listed[i].at("shape").get<Shape>();
      if (name != refs[i].first || shape != refs[i].second->shape()) {
        throw DataError("checkpoint parameter " + std::to_string(i) + " is " + name + " " + shape_str(shape) +
                        ", model expects " + refs[i].first + " " + shape_str(refs[i].second->shape()));
      }
    }
    auto read_as = [&](const Tensor& like, const std::string& what) {
      Tensor t = io::read_tensor(is);
      if (t.shape() != like.shape()) throw DataError("checkpoint block " + what + " has shape " + shape_str(t.shape()));
      return t;
    };
    for (auto& [name, t] : refs) *t = read_as(*t, name);
    for (auto& [name, t] : refs) ck.state.opt.m.push_back(read_as(*t, "opt.m." + name));
    for (auto& [name, t] : refs) ck.state.opt.v.push_back(read_as(*t, "opt.v." + name));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after checkpoint payload");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& p, const TrainState& st, const TrainConfig& cfg) {
  write_file(p, checkpoint_bytes(st, cfg));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& p) { return checkpoint_from_bytes(read_file(p)); }

}  // namespace lrq
