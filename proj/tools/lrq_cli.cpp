// lrq: dataset generation, training, evaluation, inference, verification and
// benchmarking from the command line.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure, 4 verification failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "lrq/bench.hpp"
#include "lrq/checkpoint.hpp"
#include "lrq/run_config.hpp"
#include "lrq/verify.hpp"

namespace fs = std::filesystem;
using namespace lrq;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3, kVerification = 4 };

/// Refuses a non-empty output directory unless forced; files we write
/// replace same-named ones, anything else is left alone.
void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force) throw ConfigError(dir.string() + " exists and is not empty (use --force)");
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& p, const std::string& s) { write_file(p, s); }

KeyValues collect_settings(const std::string& config_file, const std::vector<std::string>& sets) {
  KeyValues kv;
  if (!config_file.empty()) kv = parse_key_values(read_file(config_file), config_file);
  KeyValues over;
  for (const auto& s : sets) {
    auto [k, v] = parse_assignment(s, "--set");
    over[k] = v;
  }
  return merge(merge(kv, over), env_seed_override());
}

std::uint32_t combined_checksum(const DatasetManifest& m) {
  std::string all;
  for (const auto& e : m.samples) all += std::to_string(e.crc32) + ",";
  return crc32_of(all);
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string config, out, task;
  std::size_t count = 0, points = 0;
  std::uint64_t seed = 0;
  bool force = false;
};

int cmd_gen_data(const GenArgs& a, const CLI::App& sub) {
  KeyValues kv = a.config.empty() ? KeyValues{} : parse_key_values(read_file(a.config), a.config);
  if (sub.count("--task")) kv["task"] = a.task;
  if (sub.count("--count")) kv["count"] = std::to_string(a.count);
  if (sub.count("--points")) kv["points"] = std::to_string(a.points);
  if (sub.count("--seed")) kv["seed"] = std::to_string(a.seed);
  kv = merge(kv, env_seed_override());
  const GenConfig g = resolve_gen_config(kv);
  prepare_out_dir(a.out, a.force);

  const Dataset ds = generate_dataset(g.task, g.count, g.points, g.seed);
  save_dataset(ds, a.out);
  write_text(fs::path(a.out) / "effective_config.txt", effective_config_text(g));

  const auto& m = ds.manifest;
  std::printf("%-8s %8s\n", "split", "samples");
  std::printf("%-8s %8zu\n", "train", m.splits.train.size());
  std::printf("%-8s %8zu\n", "valid", m.splits.valid.size());
  std::printf("%-8s %8zu\n", "test", m.splits.test.size());
  std::printf("task %s, %zu points per sample, D_in %zu, seed %llu\n", to_string(m.task).c_str(), m.points_per_sample,
              m.d_in, static_cast<unsigned long long>(m.seed));
  std::printf("target mean %.6g std %.6g (train split)\n", m.target_stats.mean[0], m.target_stats.std[0]);
  std::printf("checksum %08x\n", combined_checksum(m));
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, resume;
  std::vector<std::string> sets;
  bool force = false, quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const KeyValues kv = collect_settings(a.config, a.sets);
  const Dataset ds = load_dataset(a.data);
  const TaskKind task = ds.manifest.task;

  TrainState st;
  TrainRun run;
  if (!a.resume.empty()) {
    Checkpoint ck = load_checkpoint(a.resume);
    if (ck.state.stats.task != task) throw DataError("checkpoint task does not match the dataset");
    run.task = task;
    run.model = ck.state.model.cfg;
    run.train = ck.config;
    const TrainRun updated = apply_settings(run, kv);
    if (to_json(updated.model) != to_json(run.model)) throw ConfigError("model keys cannot change when resuming");
    run = updated;
    st = std::move(ck.state);
  } else {
    run = resolve_train_run(task, kv);
    st = TrainState::init(run.model, DataStats::from(ds.manifest), run.train.seed);
  }

  prepare_out_dir(a.out, a.force);
  const fs::path out(a.out);
  write_text(out / "effective_config.txt", effective_config_text(run));
  std::ofstream jsonl(out / "metrics.jsonl", std::ios::trunc);
  if (!jsonl) throw DataError("cannot write " + (out / "metrics.jsonl").string());
  for (const auto& r : st.history) jsonl << to_json(r).dump() << "\n";
  jsonl.flush();

  const std::size_t every = run.train.checkpoint_every;
  auto hook = [&](const TrainState& s, const EpochRecord& r) {
    jsonl << to_json(r).dump() << "\n";
    jsonl.flush();
    if (!a.quiet) {
      std::printf("epoch %4zu  lr %.3g  loss %.6g  train_mse %.6g  valid_mse %.6g\n", r.epoch, r.lr, r.train_loss,
                  r.train_mse, r.valid_mse);
      std::fflush(stdout);
    }
    if (every > 0 && s.epoch % every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "epoch_%05zu.lrqc", s.epoch);
      save_checkpoint(out / "checkpoints" / name, s, run.train);
    }
  };
  train(st, ds, run.train, hook);
  save_checkpoint(out / "final.lrqc", st, run.train);

  nlohmann::json summary = {{"epochs_completed", st.epoch}, {"checkpoint", (out / "final.lrqc").string()}};
  if (!st.history.empty()) summary["last"] = to_json(st.history.back());
  std::cout << summary.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, split = "test", out;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset ds = load_dataset(a.data);
  if (ds.manifest.task != ck.state.stats.task) throw DataError("dataset task does not match the checkpoint");
  const auto split = ds.split(a.split);
  if (split.empty()) throw DataError("split '" + a.split + "' is empty");
  nlohmann::json report = to_json(evaluate(ck.state, split, ck.config.gradop_k));
  report["split"] = a.split;
  report["samples"] = split.size();
  report["epoch"] = ck.state.epoch;
  const std::string text = report.dump(2) + "\n";
  if (!a.out.empty()) write_text(a.out, text);
  std::cout << text;
  return kOk;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint, sample, data, out;
  std::size_t index = 0;
};

int cmd_infer(const InferArgs& a, const CLI::App& sub) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  Sample s;
  if (!a.sample.empty()) {
    s = load_sample_file(a.sample);
  } else if (!a.data.empty()) {
    const Dataset ds = load_dataset(a.data);
    if (a.index >= ds.samples.size()) throw ConfigError("--index " + std::to_string(a.index) + " out of range");
    s = ds.samples[a.index];
  } else {
    throw ConfigError("infer needs --sample or --data");
  }
  (void)sub;
  const Prediction p = predict(ck.state, s, ck.config.gradop_k);

  // The prediction file keeps the cloud, design and surface patches and
  // replaces the labels with model output; the beam model is pooled, so it
  // carries only the scalar.
  Sample out;
  out.task = s.task;
  out.seed = s.seed;
  out.coords = s.coords;
  out.design = s.design;
  out.patches = s.patches;
  out.closed_surface = s.closed_surface;
  out.target = p.scalar;
  nlohmann::json q = {{"task", to_string(s.task)}, {"points", s.size()}};
  if (s.task == TaskKind::kFlow) {
    out.fields.v = slice_cols(p.fields, 0, 3).detach();
    out.fields.p = col(p.fields, 3).detach();
    out.fields.T = col(p.fields, 4).detach();
    q["wall_force_x"] = p.scalar;
    q["drag_coefficient"] = p.drag_coefficient;
  } else {
    q["max_von_mises"] = p.scalar;
  }
  write_file(a.out, sample_bytes(out));
  write_text(a.out + ".json", q.dump(2) + "\n");
  std::cout << q.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::size_t trials = 1000;
  std::uint64_t seed = 2024;
  std::vector<std::string> only;
  bool skip_scaling = false;
  std::string out;
  bool force = false;
};

int cmd_verify(VerifyArgs a) {
  const KeyValues env = env_seed_override();
  if (env.count("seed")) a.seed = std::stoull(env.at("seed"));
  using Fn = std::function<verify::CheckResult()>;
  const std::vector<std::pair<std::string, Fn>> all{
      {"lowrank_bound", [&] { return verify::lowrank_bound(a.trials, a.seed); }},
      {"associativity", [&] { return verify::associativity(100, a.seed); }},
      {"gradients", [&] { return verify::gradients(a.seed); }},
      {"conservation", [] { return verify::conservation(); }},
      {"elasticity", [] { return verify::elasticity(); }},
      {"lr_schedule", [] { return verify::lr_schedule(); }},
      {"metrics_ranking", [&] { return verify::metrics_ranking(a.seed); }},
      {"scaling", [] { return verify::scaling_quick(); }},
  };
  for (const auto& o : a.only) {
    bool known = false;
    for (const auto& [n, f] : all) known |= n == o;
    if (!known) throw ConfigError("unknown verify suite '" + o + "'");
  }
  if (!a.out.empty()) prepare_out_dir(a.out, a.force);

  nlohmann::json report = {{"trials", a.trials}, {"seed", a.seed}, {"checks", nlohmann::json::array()}};
  std::vector<std::string> failed;
  for (const auto& [name, fn] : all) {
    const bool selected = a.only.empty() ? !(name == "scaling" && a.skip_scaling)
                                         : std::find(a.only.begin(), a.only.end(), name) != a.only.end();
    if (!selected) continue;
    const auto r = fn();
    std::printf("%s %-16s %7.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    std::fflush(stdout);
    report["checks"].push_back(verify::to_json(r));
    if (!r.passed) failed.push_back(r.name);
  }
  report["passed"] = failed.empty();
  if (!a.out.empty()) {
    write_text(fs::path(a.out) / "verify_report.json", report.dump(2) + "\n");
    write_text(fs::path(a.out) / "effective_config.txt",
               "trials = " + std::to_string(a.trials) + "\nseed = " + std::to_string(a.seed) + "\n");
  }
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    throw VerificationError("failed invariants: " + names);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::vector<std::string> kernels{"covariance", "standard_materialized", "standard_associative"};
  std::vector<std::size_t> sizes;
  std::size_t c = 64, repeats = 5, large = 0;
  std::uint64_t seed = 1;
  bool memory = false, check = false, force = false;
  std::string out;
};

std::vector<std::size_t> default_sizes(bench::Kernel k) {
  std::vector<std::size_t> ns;
  const std::size_t top = k == bench::Kernel::kStandardMaterialized ? 16384 : 262144;
  for (std::size_t n = 1024; n <= top; n *= 2) ns.push_back(n);
  return ns;
}

int cmd_bench(BenchArgs a) {
  const KeyValues env = env_seed_override();
  if (env.count("seed")) a.seed = std::stoull(env.at("seed"));
  prepare_out_dir(a.out, a.force);
  const fs::path out(a.out);
  std::ofstream csv(out / "scaling.csv", std::ios::trunc);
  if (!csv) throw DataError("cannot write " + (out / "scaling.csv").string());
  bench::write_csv_header(csv);

  bench::ScalingOptions opt;
  opt.repeats = a.repeats;
  opt.seed = a.seed;
  nlohmann::json summary = {{"C", a.c}, {"repeats", a.repeats}, {"seed", a.seed}, {"kernels", nlohmann::json::array()}};
  std::vector<std::string> problems;
  for (const auto& name : a.kernels) {
    const bench::Kernel k = bench::parse_kernel(name);
    const auto rep = bench::scaling_run(k, a.sizes.empty() ? default_sizes(k) : a.sizes, a.c, opt);
    bench::write_csv_rows(csv, rep);
    csv.flush();
    summary["kernels"].push_back(bench::to_json(rep));
    std::printf("%-22s slope %.3f  R² %.4f%s\n", name.c_str(), rep.fit.slope, rep.fit.r2, rep.noisy ? "  (noisy)" : "");
    std::fflush(stdout);
    const bool quad = k == bench::Kernel::kStandardMaterialized;
    const double lo = quad ? 1.7 : 0.8, hi = quad ? 2.3 : 1.2;
    if (rep.fit.slope < lo || rep.fit.slope > hi || rep.noisy) problems.push_back(name + " slope");
  }
  if (a.memory) {
    const double cov = double(bench::memory_audit(bench::Kernel::kCovariance, 8192, a.c)) /
                       double(bench::memory_audit(bench::Kernel::kCovariance, 4096, a.c));
    const double mat = double(bench::memory_audit(bench::Kernel::kStandardMaterialized, 2048, a.c)) /
                       double(bench::memory_audit(bench::Kernel::kStandardMaterialized, 1024, a.c));
    const auto fit = bench::fit_memory_model(bench::Kernel::kCovariance,
                                             {{1024, 16}, {2048, 16}, {1024, 32}, {4096, 32}, {2048, 64}, {512, 128}});
    summary["memory"] = {{"covariance_doubling", cov}, {"materialized_doubling", mat}, {"affine_a", fit.a}, {"affine_b", fit.b}};
    std::printf("memory: N doubling x%.3f (covariance), x%.3f (materialized); peak ≈ %.2f·NC·8 + %.2f·C²·8\n", cov, mat,
                fit.a, fit.b);
    if (cov < 1.8 || cov > 2.2 || mat < 3.5 || mat > 4.5 || fit.a > 8 || fit.b > 16) problems.push_back("memory");
  }
  if (a.large > 0) {
    const auto r = bench::large_forward(a.large, a.c, a.seed);
    summary["large"] = {{"N", r.n}, {"C", r.c}, {"seconds", r.seconds}, {"tensor_peak_bytes", r.tensor_peak},
                        {"rss_peak_bytes", r.rss_peak}};
    std::printf("large: N=%zu C=%zu  %.2f s  tensor peak %.2f GB  rss peak %.2f GB\n", r.n, r.c, r.seconds,
                double(r.tensor_peak) / 1e9, double(r.rss_peak) / 1e9);
    if (r.seconds >= 60 || r.rss_peak >= 4e9) problems.push_back("large run");
  }
  write_text(out / "summary.json", summary.dump(2) + "\n");
  write_text(out / "effective_config.txt", "C = " + std::to_string(a.c) + "\nrepeats = " + std::to_string(a.repeats) +
                                               "\nseed = " + std::to_string(a.seed) + "\n");
  if (a.check && !problems.empty()) {
    std::string s;
    for (const auto& p : problems) s += (s.empty() ? "" : ", ") + p;
    throw VerificationError("benchmark checks failed: " + s);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LR-QA neural operator: data, training, evaluation and verification"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset with a 70/15/15 split");
  g->add_option("--config", gen.config, "key = value file (task, count, points, seed)");
  g->add_option("--task", gen.task, "flow or beam");
  g->add_option("--count", gen.count, "number of samples");
  g->add_option("--points", gen.points, "points per sample");
  g->add_option("--seed", gen.seed, "dataset seed");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_flag("--force", gen.force, "write into a non-empty directory");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model; writes checkpoints and metrics.jsonl");
  t->add_option("--config", tr.config, "key = value file");
  t->add_option("--set", tr.sets, "key=value override (repeatable)");
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--resume", tr.resume, "continue from this checkpoint");
  t->add_flag("--force", tr.force, "write into a non-empty directory");
  t->add_flag("--quiet", tr.quiet, "no per-epoch lines");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Metrics of a checkpoint on a dataset split");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--split", ev.split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  e->add_option("--out", ev.out, "also write the report here");

  InferArgs in;
  auto* i = app.add_subcommand("infer", "Predict one sample; writes an LRQS file and integrated quantities");
  i->add_option("--checkpoint", in.checkpoint)->required();
  i->add_option("--sample", in.sample, "LRQS sample file");
  i->add_option("--data", in.data, "dataset directory (with --index)");
  i->add_option("--index", in.index, "sample id within --data");
  i->add_option("--out", in.out, "prediction file; quantities go to <out>.json")->required();

  VerifyArgs vf;
  auto* v = app.add_subcommand("verify", "Run the invariant suites; exit 0 iff all pass");
  v->add_option("--trials", vf.trials, "bound-audit trials")->check(CLI::PositiveNumber);
  v->add_option("--seed", vf.seed);
  v->add_option("--only", vf.only, "run only these suites (repeatable)");
  v->add_flag("--skip-scaling", vf.skip_scaling, "leave out the timing fits");
  v->add_option("--out", vf.out, "write verify_report.json here");
  v->add_flag("--force", vf.force);

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "Scaling, memory and large-cloud benchmarks (CSV + JSON)");
  b->add_option("--kernel", bn.kernels, "covariance, standard_materialized, standard_associative (repeatable)");
  b->add_option("--sizes", bn.sizes, "N values, ascending (default: 1k..256k, 1k..16k materialized)")->delimiter(',');
  b->add_option("--C", bn.c, "feature width");
  b->add_option("--repeats", bn.repeats, "timed repeats per size (>= 5)");
  b->add_option("--seed", bn.seed);
  b->add_option("--large", bn.large, "also run one streaming layer forward at this N");
  b->add_flag("--memory", bn.memory, "memory audit");
  b->add_flag("--check", bn.check, "exit 4 if slopes or budgets are out of range");
  b->add_option("--out", bn.out)->required();
  b->add_flag("--force", bn.force);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_gen_data(gen, *g);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*i) return cmd_infer(in, *i);
    if (*v) return cmd_verify(vf);
    if (*b) return cmd_bench(bn);
  } catch (const ConfigError& x) {
    std::fprintf(stderr, "error: %s\n", x.what());
    return kUsage;
  } catch (const DataError& x) {
    std::fprintf(stderr, "data error: %s\n", x.what());
    return kData;
  } catch (const DimensionError& x) {
    std::fprintf(stderr, "data error: %s\n", x.what());
    return kData;
  } catch (const NumericError& x) {
    std::fprintf(stderr, "numeric failure: %s\n", x.what());
    return kNumeric;
  } catch (const VerificationError& x) {
    std::fprintf(stderr, "verification failed: %s\n", x.what());
    return kVerification;
  } catch (const std::filesystem::filesystem_error& x) {
    std::fprintf(stderr, "data error: %s\n", x.what());
    return kData;
  }
  return kUsage;
}
