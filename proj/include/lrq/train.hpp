#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrq/dataset_io.hpp"
#include "lrq/grad_operator.hpp"
#include "lrq/losses.hpp"
#include "lrq/model.hpp"
#include "lrq/optim.hpp"
#include "lrq/physics.hpp"

namespace lrq {

/// Where ‖θ‖² regularization lives. Exactly one of the two is ever active.
enum class DecayMode { kDecoupled, kLossTerm };

inline std::string to_string(DecayMode m) { return m == DecayMode::kDecoupled ? "decoupled" : "loss_term"; }

inline DecayMode parse_decay_mode(const std::string& s) {
  if (s == "decoupled") return DecayMode::kDecoupled;
  if (s == "loss_term") return DecayMode::kLossTerm;
  throw ConfigError("unknown weight_decay_mode '" + s + "' (expected decoupled or loss_term)");
}

struct TrainConfig {
  LrSchedule schedule;
  std::size_t batch_size = 4;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  AdamWConfig adamw;
  LossWeights loss;
  DecayMode decay_mode = DecayMode::kDecoupled;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  double grad_clip = 0.0;            // max global norm, 0 disables
  std::size_t gradop_k = 16;         // neighbours for the physics term
};

inline void validate(const TrainConfig& c) {
  validate(c.schedule);
  validate(c.adamw);
  validate(c.loss);
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(c.grad_clip >= 0) || !std::isfinite(c.grad_clip)) throw ConfigError("grad_clip must be finite and non-negative");
  if (c.gradop_k < 10) throw ConfigError("gradop_k must be at least 10 for the quadratic fit");
}

/// Loss weights and optimizer settings with the inactive decay switched off.
inline LossWeights effective_loss_weights(const TrainConfig& c) {
  LossWeights w = c.loss;
  if (c.decay_mode == DecayMode::kDecoupled) w.lambda = 0.0;
  return w;
}

inline AdamWConfig effective_adamw(const TrainConfig& c) {
  AdamWConfig a = c.adamw;
  if (c.decay_mode == DecayMode::kLossTerm) a.weight_decay = 0.0;
  return a;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr0", c.schedule.lr0},
          {"decay_factor", c.schedule.decay_factor},
          {"decay_epoch", c.schedule.decay_epoch},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"beta1", c.adamw.beta1},
          {"beta2", c.adamw.beta2},
          {"adam_eps", c.adamw.eps},
          {"weight_decay", c.adamw.weight_decay},
          {"weight_decay_mode", to_string(c.decay_mode)},
          {"alpha1", c.loss.alpha1},
          {"alpha2", c.loss.alpha2},
          {"alpha3", c.loss.alpha3},
          {"lambda", c.loss.lambda},
          {"margin", c.loss.margin},
          {"checkpoint_every", c.checkpoint_every},
          {"grad_clip", c.grad_clip},
          {"gradop_k", c.gradop_k}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    c.schedule.lr0 = j.at("lr0").get<double>();
    c.schedule.decay_factor = j.at("decay_factor").get<double>();
    c.schedule.decay_epoch = j.at("decay_epoch").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.adamw.beta1 = j.at("beta1").get<double>();
    c.adamw.beta2 = j.at("beta2").get<double>();
    c.adamw.eps = j.at("adam_eps").get<double>();
    c.adamw.weight_decay = j.at("weight_decay").get<double>();
    c.decay_mode = parse_decay_mode(j.at("weight_decay_mode").get<std::string>());
    c.loss.alpha1 = j.at("alpha1").get<double>();
    c.loss.alpha2 = j.at("alpha2").get<double>();
    c.loss.alpha3 = j.at("alpha3").get<double>();
    c.loss.lambda = j.at("lambda").get<double>();
    c.loss.margin = j.at("margin").get<double>();
    c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
    c.grad_clip = j.at("grad_clip").get<double>();
    c.gradop_k = j.at("gradop_k").get<std::size_t>();
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed training config: ") + e.what());
  }
}

/// The model's view of a dataset: task, and the train-split normalization
/// stats every input and output passes through.
struct DataStats {
  TaskKind task = TaskKind::kFlow;
  Normalizer design, target, field;

  static DataStats from(const DatasetManifest& m) { return {m.task, m.design_stats, m.target_stats, m.field_stats}; }
};

inline nlohmann::json to_json(const DataStats& s) {
  return {{"task", to_string(s.task)}, {"design", to_json(s.design)}, {"target", to_json(s.target)}, {"field", to_json(s.field)}};
}

inline DataStats data_stats_from_json(const nlohmann::json& j) {
  try {
    return {parse_task(j.at("task").get<std::string>()), normalizer_from_json(j.at("design")),
            normalizer_from_json(j.at("target")), normalizer_from_json(j.at("field"))};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed data stats: ") + e.what());
  }
}

/// Flow predicts the per-point fields (v, p, T); beam predicts max σ_vM.
inline ModelConfig default_model_config(TaskKind task) {
  ModelConfig c;
  c.pce.input_dim = design_dim(task);
  c.output_dim = task == TaskKind::kFlow ? field_dim(task) : 1;
  c.readout = task == TaskKind::kFlow ? Readout::kPerPointField : Readout::kPooledScalar;
  return c;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;  // mean total loss over the epoch's batches
  double train_mse = 0;   // mean data term over the epoch's batches
  double valid_mse = std::numeric_limits<double>::quiet_NaN();  // NaN: no valid split
};

inline nlohmann::json to_json(const EpochRecord& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", num(r.train_loss)}, {"train_mse", num(r.train_mse)},
          {"valid_mse", num(r.valid_mse)}};
}

inline EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  auto num = [](const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  return {j.at("epoch").get<std::size_t>(), j.at("lr").get<double>(), num(j.at("train_loss")), num(j.at("train_mse")),
          num(j.at("valid_mse"))};
}

/// Everything that determines the rest of a run: parameters, optimizer
/// moments, the next epoch and the batch-shuffling stream.
struct TrainState {
  LrqModel model;
  OptimizerState opt;
  DataStats stats;
  std::size_t epoch = 0;
  Rng shuffle_rng;
  std::vector<EpochRecord> history;

  static TrainState init(const ModelConfig& mc, const DataStats& stats, std::uint64_t seed) {
    if (mc.pce.input_dim != design_dim(stats.task)) {
      throw ConfigError("model d_in " + std::to_string(mc.pce.input_dim) + " does not match the " +
                        to_string(stats.task) + " design dimension " + std::to_string(design_dim(stats.task)));
    }
    TrainState s;
    Rng rng(seed);
    s.model = LrqModel::init(mc, rng);
    s.opt = OptimizerState::init(s.model.params());
    s.stats = stats;
    s.shuffle_rng.seed(seed ^ 0x9e3779b97f4a7c15ULL);
    return s;
  }
};

inline std::string rng_state(const Rng& r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

inline Rng rng_from_state(const std::string& s) {
  std::istringstream is(s);
  Rng r;
  is >> r;
  if (is.fail()) throw DataError("malformed RNG state");
  return r;
}

// ---------------------------------------------------------------------------
// Per-sample inputs, normalized once per run

struct PreparedSample {
  const Sample* sample = nullptr;
  Tensor coords, design;  // design normalized
  Tensor target;          // flow: N×5 normalized fields; beam: [1] normalized max σ_vM
  RopeTables rope;
  std::shared_ptr<const ScatteredGradOperator> gradop;  // flow with a physics term only
  MaterialProps mat;
};

inline Tensor normalize_cols(const Tensor& x, const Normalizer& n) {
  const std::size_t c = x.cols();
  if (n.mean.size() != c) throw DimensionError("normalizer has " + std::to_string(n.mean.size()) + " columns, data has " + std::to_string(c));
  Buffer b(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = (b[i] - n.mean[i % c]) / n.std[i % c];
  return Tensor(x.shape(), std::move(b));
}

/// Tracked inverse of normalize_cols: x·diag(std) + mean.
inline Tensor denormalize_cols(const Tensor& x, const Normalizer& n) {
  const std::size_t c = n.mean.size();
  Tensor w = Tensor::zeros({c, c});
  for (std::size_t j = 0; j < c; ++j) w.mutable_values()[j * c + j] = n.std[j];
  return affine(x, w, Tensor({c}, Buffer(n.mean.begin(), n.mean.end())));
}

inline MaterialProps flow_material(const Sample& s) {
  const FlowParams f = flow_params_from_design(s.design);
  MaterialProps m;
  m.rho = f.rho;
  m.mu = f.mu;
  return m;
}

inline PreparedSample prepare(const Sample& s, const TrainState& st, bool with_gradop, std::size_t k) {
  if (s.task != st.stats.task) throw DataError("sample task " + to_string(s.task) + " does not match the model's " + to_string(st.stats.task));
  PreparedSample p;
  p.sample = &s;
  p.coords = s.coords;
  p.design = st.stats.design.apply(s.design);
  if (st.model.cfg.readout == Readout::kPerPointField) {
    p.target = normalize_cols(s.point_targets(), st.stats.field);
  } else {
    p.target = Tensor::vector({st.stats.target.apply(s.target, 0)});
  }
  p.rope = rope_tables(s.coords, st.model.cfg.lrqa);
  if (with_gradop && s.task == TaskKind::kFlow) {
    p.gradop = std::make_shared<ScatteredGradOperator>(build_grad_operator(s.coords, k));
    p.mat = flow_material(s);
  }
  return p;
}

inline Tensor forward(const LrqModel& m, const PreparedSample& p) { return model_forward(m, p.coords, p.design, p.rope); }

/// Physics residual of a normalized flow prediction, in physical units.
inline Tensor flow_physics_loss(const Tensor& pred_norm, const PreparedSample& p, const Normalizer& field) {
  const Tensor f = denormalize_cols(pred_norm, field);
  FieldPrediction fp{slice_cols(f, 0, 3), col(f, 3), col(f, 4), {}};
  return physics_terms(fp, *p.gradop, p.mat).total;
}

/// Data MSE in normalized units, averaged over samples; no tape.
inline double data_mse(const LrqModel& m, const std::vector<PreparedSample>& set) {
  if (set.empty()) throw DataError("data_mse: empty sample set");
  double acc = 0.0;
  for (const auto& p : set) acc += mse_loss(forward(m, p), p.target).item();
  return acc / double(set.size());
}

// ---------------------------------------------------------------------------
// Training

struct BatchResult {
  double loss = 0, data = 0;
};

/// forward → total_loss → backward → adamw_step on one mini-batch.
inline BatchResult train_step(TrainState& st, const std::vector<const PreparedSample*>& batch, double lr,
                              const TrainConfig& cfg, const std::string& where) {
  const LossWeights w = effective_loss_weights(cfg);
  const bool pooled = st.model.cfg.readout == Readout::kPooledScalar;
  ParamRefs refs = st.model.params();
  std::vector<Tensor> grads;
  BatchResult out;
  {
    Tape tape;
    TapeBinding bind(tape, refs);
    std::vector<Tensor> preds, targets, phys;
    for (const auto* p : batch) {
      const Tensor y = forward(st.model, *p);
      preds.push_back(reshape(y, {1, y.numel()}));
      targets.push_back(p->target.reshaped({1, p->target.numel()}));
      if (w.alpha2 > 0 && p->gradop) phys.push_back(reshape(flow_physics_loss(y, *p, st.stats.field), {1, 1}));
    }
    LossInputs in;
    in.pred = concat_cols(preds);
    in.target = concat_cols(targets);
    if (!phys.empty()) in.physics = mean(concat_cols(phys));
    if (pooled && batch.size() >= 2) {
      in.rank_pred = in.pred;
      in.rank_truth = in.target;
    }
    if (w.lambda > 0)
      for (const auto& [name, t] : refs) in.params.push_back(*t);
    const LossBreakdown b = total_loss(in, w);
    out.loss = b.total.item();
    out.data = b.data.item();
    if (!std::isfinite(out.loss)) throw NumericError("non-finite loss " + std::to_string(out.loss) + " at " + where);
    tape.backward(b.total);
    for (std::size_t i = 0; i < refs.size(); ++i) grads.push_back(bind.grad(tape, i));
  }
  clip_grad_norm(grads, cfg.grad_clip);
  adamw_step(refs, grads, st.opt, lr, effective_adamw(cfg));
  return out;
}

/// Called after each finished epoch; used for checkpoints and logs.
using EpochHook = std::function<void(const TrainState&, const EpochRecord&)>;

/// Runs epochs st.epoch … cfg.epochs−1. A state loaded from a checkpoint
/// continues exactly where the interrupted run stopped.
inline void train(TrainState& st, const Dataset& ds, const TrainConfig& cfg, const EpochHook& hook = {}) {
  validate(cfg);
  if (ds.samples.empty() || ds.manifest.splits.train.empty()) throw DataError("training needs a non-empty train split");
  if (ds.manifest.task != st.stats.task) throw DataError("dataset task does not match the model");
  if (st.epoch >= cfg.epochs) return;
  const bool physics = effective_loss_weights(cfg).alpha2 > 0 && st.stats.task == TaskKind::kFlow;
  std::vector<PreparedSample> train_set, valid_set;
  for (const Sample* s : ds.split("train")) train_set.push_back(prepare(*s, st, physics, cfg.gradop_k));
  for (const Sample* s : ds.split("valid")) valid_set.push_back(prepare(*s, st, false, cfg.gradop_k));
  const auto& ids = ds.manifest.splits.train;

  for (std::size_t epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, cfg.schedule);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), st.shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      std::vector<const PreparedSample*> batch;
      std::string names;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + cfg.batch_size); ++i) {
        batch.push_back(&train_set[order[i]]);
        names += (names.empty() ? "" : ",") + std::to_string(ids[order[i]]);
      }
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) +
                                " (samples " + names + ")";
      const BatchResult r = train_step(st, batch, lr, cfg, where);
      rec.train_loss += r.loss;
      rec.train_mse += r.data;
      ++batches;
    }
    rec.train_loss /= double(batches);
    rec.train_mse /= double(batches);
    if (!valid_set.empty()) rec.valid_mse = data_mse(st.model, valid_set);
    st.history.push_back(rec);
    st.epoch = epoch + 1;
    if (hook) hook(st, rec);
  }
}

// ---------------------------------------------------------------------------
// Inference and evaluation, in physical units

struct Prediction {
  Tensor fields;        // flow: N×5 (v, p, T); empty for beam
  double scalar = 0.0;  // flow: wall x-force from the predicted fields; beam: max σ_vM
  double drag_coefficient = 0.0;  // flow only
};

inline Prediction predict(const TrainState& st, const Sample& s, std::size_t gradop_k = 16) {
  if (s.design.numel() != st.model.cfg.pce.input_dim) {
    throw DimensionError("design vector has " + std::to_string(s.design.numel()) + " entries, expected D_in = " +
                         std::to_string(st.model.cfg.pce.input_dim));
  }
  if (s.task != st.stats.task) throw DataError("sample task " + to_string(s.task) + " does not match the model's " + to_string(st.stats.task));
  const Tensor y = model_forward(st.model, s.coords, st.stats.design.apply(s.design));
  Prediction p;
  if (st.model.cfg.readout == Readout::kPooledScalar) {
    p.scalar = st.stats.target.invert(y[0], 0);
    return p;
  }
  p.fields = denormalize_cols(y, st.stats.field).detach();
  if (s.task == TaskKind::kFlow && s.patches.size() > 0) {
    const auto op = build_grad_operator(s.coords, gradop_k);
    FieldPrediction fp{slice_cols(p.fields, 0, 3), col(p.fields, 3), col(p.fields, 4), {}};
    const Tensor f = force_integral(fp, s.patches, &op, flow_material(s));
    p.scalar = f[0];
    const FlowParams fl = flow_params_from_design(s.design);
    p.drag_coefficient = drag_coefficient(f, {fl.rho, fl.u_max, fl.length * fl.width, {1, 0, 0}});
  }
  return p;
}

struct EvalReport {
  std::vector<std::pair<std::string, MetricsReport>> targets;
  std::vector<std::string> skipped;  // targets whose truth is identically zero
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, m] : r.targets) j[name] = to_json(m);
  if (!r.skipped.empty()) j["skipped_all_zero"] = r.skipped;
  return j;
}

using Predictor = std::function<Prediction(const Sample&)>;

/// Metrics per target over a split. Flow reports each field column, all
/// fields pooled, and the integrated wall force; beam reports max σ_vM.
inline EvalReport evaluate(Readout readout, const std::vector<const Sample*>& split, const Predictor& predictor) {
  if (split.empty()) throw DataError("evaluate: empty split");
  EvalReport rep;
  if (readout == Readout::kPooledScalar) {
    std::vector<double> pred, truth;
    for (const Sample* s : split) {
      pred.push_back(predictor(*s).scalar);
      truth.push_back(s->target);
    }
    rep.targets.emplace_back("max_von_mises", metrics(pred, truth));
    return rep;
  }
  static const char* kNames[] = {"v_x", "v_y", "v_z", "p", "T"};
  std::size_t cols = 0;
  std::vector<std::vector<double>> pc, tc;
  std::vector<double> pall, tall, pf, tf;
  for (const Sample* s : split) {
    const Prediction p = predictor(*s);
    const Tensor t = s->point_targets();
    if (p.fields.shape() != t.shape()) {
      throw DimensionError("prediction " + shape_str(p.fields.shape()) + " does not match targets " + shape_str(t.shape()));
    }
    cols = t.cols();
    pc.resize(cols);
    tc.resize(cols);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      pc[i % cols].push_back(p.fields[i]);
      tc[i % cols].push_back(t[i]);
    }
    pall.insert(pall.end(), p.fields.values().begin(), p.fields.values().end());
    tall.insert(tall.end(), t.values().begin(), t.values().end());
    if (s->patches.size() > 0) {
      pf.push_back(p.scalar);
      tf.push_back(s->target);
    }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    const std::string name = c < 5 ? kNames[c] : "field_" + std::to_string(c);
    if (std::all_of(tc[c].begin(), tc[c].end(), [](double v) { return std::abs(v) < kMreFloor; })) {
      rep.skipped.push_back(name);
      continue;
    }
    rep.targets.emplace_back(name, metrics(pc[c], tc[c]));
  }
  rep.targets.emplace_back("fields", metrics(pall, tall));
  if (!pf.empty()) rep.targets.emplace_back("wall_force_x", metrics(pf, tf));
  return rep;
}

inline EvalReport evaluate(const TrainState& st, const std::vector<const Sample*>& split, std::size_t gradop_k = 16) {
  return evaluate(st.model.cfg.readout, split, [&](const Sample& s) { return predict(st, s, gradop_k); });
}

}  // namespace lrq
