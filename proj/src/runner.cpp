#include "pild/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pild/loss.hpp"
#include "pild/sampler.hpp"

namespace pild {

namespace {

// distinct RNG streams per run stage, all derived from the config seed
constexpr std::uint64_t kStreamTrain = 1;
constexpr std::uint64_t kStreamSample = 2;
constexpr std::uint64_t kStreamEval = 3;

// gauss-sanity fixture
constexpr Real kGaussMean[2] = {0.8, -0.3};
constexpr Real kGaussStd[2] = {1.3, 0.6};

/// max(x, floor) built from relu; keeps permeability positive inside the
/// training penalty where the generated field may stray negative.
Tensor clamp_min(const Tensor& x, Real floor) {
  return add_scalar(relu(add_scalar(x, -floor)), floor);
}

constexpr Real kPermFloor = 1e-6;

}  // namespace

std::string format_real(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Dataset generate_dataset(const RunConfig& cfg) {
  validate_config(cfg);
  if (cfg.task == "toy") {
    return gen_parallelogram(cfg.data_n, make_parallelogram(), cfg.seed);
  }
  if (cfg.task == "darcy") {
    DarcyProblem prob = make_darcy_problem(cfg.darcy_s);
    return gen_darcy_dataset(cfg.data_n, cfg.darcy_s, cfg.darcy_corr_len, prob,
                             cfg.seed);
  }
  if (cfg.task == "oscillator") {
    OscillatorSpec spec{cfg.osc_omega, cfg.osc_dt, cfg.osc_length};
    return gen_oscillator_dataset(cfg.data_n, spec, cfg.seed);
  }
  // gauss-sanity
  Dataset ds;
  ds.task = "gauss-sanity";
  ds.seed = cfg.seed;
  ds.samples.reserve(cfg.data_n);
  for (std::size_t i = 0; i < cfg.data_n; ++i) {
    Rng rng(Rng::derive(cfg.seed, i));
    ds.samples.push_back(Tensor::from(
        {2}, {kGaussMean[0] + kGaussStd[0] * rng.normal(),
              kGaussMean[1] + kGaussStd[1] * rng.normal()}));
  }
  ds.stats = compute_stats(ds.samples, 2);
  return ds;
}

TaskContext build_task(const RunConfig& cfg, Dataset dataset) {
  TaskContext ctx;
  ctx.dataset = std::move(dataset);
  if (ctx.dataset.samples.empty()) throw DataError("build_task: empty dataset");

  ctx.normalized.reserve(ctx.dataset.size());
  for (const Tensor& s : ctx.dataset.samples)
    ctx.normalized.push_back(normalize(s, ctx.dataset.stats));

  NetConfig net;
  net.backbone = cfg.backbone;
  net.conditioning = cfg.conditioning;
  net.data_shape = ctx.dataset.sample_shape();
  net.cond_dim = ctx.dataset.conditional()
                     ? ctx.dataset.conditions.front().numel()
                     : 0;
  net.hidden = cfg.hidden;
  net.layers = cfg.layers;
  net.base_channels = cfg.base_channels;
  net.time_dim = cfg.time_dim;
  net.heads = cfg.heads;
  net.film_hidden = cfg.film_hidden;
  net.cond_tokens = cfg.cond_tokens;
  net.token_width = cfg.token_width;
  ctx.net_cfg = net;

  NormStats stats = ctx.dataset.stats;
  if (cfg.task == "toy") {
    ctx.inequality = std::make_shared<InequalitySet>(make_parallelogram());
    auto ineq = ctx.inequality;
    ctx.train_residual = [ineq, stats](const Tensor& x) {
      return inequality_residual(denormalize_on_tape(x, stats), *ineq);
    };
    ctx.eval_residual = [ineq](const Tensor& x) {
      return inequality_residual(x, *ineq);
    };
  } else if (cfg.task == "darcy") {
    ctx.darcy = std::make_shared<DarcyProblem>(make_darcy_problem(cfg.darcy_s));
    auto prob = ctx.darcy;
    ctx.train_residual = [prob, stats](const Tensor& x) {
      Tensor raw = denormalize_on_tape(x, stats);
      Tensor k = clamp_min(take_channel(raw, 0), kPermFloor);
      Tensor p = take_channel(raw, 1);
      return darcy_residual(k, p, *prob);
    };
    ctx.eval_residual = [prob](const Tensor& x) {
      Tensor k = clamp_min(take_channel(x, 0), kPermFloor);
      Tensor p = take_channel(x, 1);
      return darcy_residual(k, p, *prob);
    };
  } else if (cfg.task == "oscillator") {
    ctx.oscillator = std::make_shared<OscillatorSpec>(
        OscillatorSpec{cfg.osc_omega, cfg.osc_dt, cfg.osc_length});
    auto spec = ctx.oscillator;
    ctx.train_residual = [spec, stats](const Tensor& x) {
      return oscillator_residual(denormalize_on_tape(x, stats), *spec);
    };
    ctx.eval_residual = [spec](const Tensor& x) {
      return oscillator_residual(x, *spec);
    };
  }
  // gauss-sanity has no constraint; both closures stay empty
  return ctx;
}

ResidualFn make_eval_residual(const RunConfig& cfg, const TaskContext& ctx) {
  (void)cfg;
  return ctx.eval_residual;
}

// --- checkpoints -----------------------------------------------------------

void save_checkpoint(const std::filesystem::path& prefix,
                     const DenoiserNet& net, const NormStats& stats,
                     const std::string& task) {
  const auto& params = net.named_parameters();
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  Tensor flat = Tensor::zeros({total});
  auto fd = flat.data_mut();
  std::size_t off = 0;
  for (const auto& p : params) {
    std::copy(p.tensor.data().begin(), p.tensor.data().end(), fd.begin() + off);
    off += p.tensor.numel();
  }
  save_tensor(prefix.string() + ".bin", flat);

  std::ofstream os(prefix.string() + ".manifest");
  if (!os) throw DataError("save_checkpoint: cannot write manifest");
  os << "format=pild-ckpt-v1\n";
  os << "task=" << task << "\n";
  os << "stats_mean=";
  for (std::size_t i = 0; i < stats.mean.size(); ++i)
    os << (i ? " " : "") << format_real(stats.mean[i]);
  os << "\nstats_std=";
  for (std::size_t i = 0; i < stats.stddev.size(); ++i)
    os << (i ? " " : "") << format_real(stats.stddev[i]);
  os << "\n";
  for (const auto& p : params) {
    os << "param=" << p.name;
    for (std::size_t d : p.tensor.shape()) os << " " << d;
    os << "\n";
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& prefix,
                           const NetConfig& net_cfg, std::uint64_t seed) {
  std::ifstream is(prefix.string() + ".manifest");
  if (!is)
    throw DataError("load_checkpoint: missing manifest " + prefix.string() +
                    ".manifest");
  Checkpoint ck;
  ck.net = std::make_unique<DenoiserNet>(net_cfg, seed);
  std::vector<std::pair<std::string, Shape>> listed;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("load_checkpoint: malformed manifest line: " + line);
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "format") {
      if (val != "pild-ckpt-v1")
        throw DataError("load_checkpoint: unsupported format " + val);
    } else if (key == "task") {
      ck.task = val;
    } else if (key == "stats_mean" || key == "stats_std") {
      std::istringstream vs(val);
      Real v;
      auto& dst = key == "stats_mean" ? ck.stats.mean : ck.stats.stddev;
      while (vs >> v) dst.push_back(v);
    } else if (key == "param") {
      std::istringstream vs(val);
      std::string name;
      vs >> name;
      Shape shape;
      std::size_t d;
      while (vs >> d) shape.push_back(d);
      listed.emplace_back(name, shape);
    }
  }
  const auto& params = ck.net->named_parameters();
  if (listed.size() != params.size())
    throw DataError("load_checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (listed[i].first != params[i].name ||
        listed[i].second != params[i].tensor.shape())
      throw DataError("load_checkpoint: architecture mismatch at " +
                      listed[i].first);

  Tensor flat = load_tensor(prefix.string() + ".bin");
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  if (flat.numel() != total)
    throw DataError("load_checkpoint: payload size mismatch");
  std::size_t off = 0;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    auto d = t.data_mut();
    std::copy(flat.data().begin() + off, flat.data().begin() + off + t.numel(),
              d.begin());
    off += t.numel();
  }
  return ck;
}

// --- training ------------------------------------------------------------------

std::filesystem::path run_train(const RunConfig& cfg) {
  validate_config(cfg);
  if (cfg.dataset_path.empty())
    throw ConfigError("train: dataset.path is required");
  Dataset ds = load_dataset(cfg.dataset_path);
  if (ds.task != cfg.task)
    throw DataError("train: dataset task '" + ds.task +
                    "' does not match config task '" + cfg.task + "'");
  TaskContext ctx = build_task(cfg, std::move(ds));

  std::filesystem::path run_dir(cfg.out_dir);
  std::filesystem::create_directories(run_dir);
  {
    std::ofstream os(run_dir / "config.resolved");
    os << serialize_config(cfg);
  }
  {
    std::ofstream os(run_dir / "run_record.txt");
    os << "dataset_path=" << cfg.dataset_path << "\n";
    os << "dataset_manifest_hash="
       << file_hash_hex(std::filesystem::path(cfg.dataset_path) / "manifest.txt")
       << "\n";
  }

  NoiseSchedule sched = cfg.make_schedule();
  LossConfig lcfg = cfg.make_loss_config();
  DenoiserNet net(ctx.net_cfg, cfg.seed);
  AdamState adam(net.parameters(), cfg.make_adam_config());
  Rng rng(Rng::derive(cfg.seed, kStreamTrain));

  std::ofstream csv(run_dir / "loss.csv");
  if (!csv) throw DataError("train: cannot write loss.csv");
  csv << "iteration,t_mean,data_term,physics_term,total\n";

  const std::vector<Tensor>* conds =
      ctx.dataset.conditional() ? &ctx.dataset.conditions : nullptr;
  const ResidualFn* resid =
      ctx.train_residual ? &ctx.train_residual : nullptr;

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    LossBreakdown lb;
    try {
      lb = train_step(net, ctx.normalized, conds, resid, sched, lcfg, adam,
                      cfg.batch, rng);
    } catch (const NumericError& e) {
      throw NumericError("train: iteration " + std::to_string(it) + ": " +
                         e.what());
    }
    csv << it << "," << format_real(lb.t) << "," << format_real(lb.data_term)
        << "," << format_real(lb.physics_term) << ","
        << format_real(lb.total) << "\n";
    if (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0)
      save_checkpoint(run_dir / ("ckpt_" + std::to_string(it)), net,
                      ctx.dataset.stats, cfg.task);
  }
  save_checkpoint(run_dir / "ckpt_final", net, ctx.dataset.stats, cfg.task);
  return run_dir;
}

// --- sampling ------------------------------------------------------------------

std::vector<Tensor> generate_samples(const DenoiserNet& net,
                                     const NormStats& stats,
                                     const RunConfig& cfg,
                                     const std::vector<Tensor>* conditions,
                                     std::size_t n, Rng& rng) {
  const Shape& shape = net.config().data_shape;
  NoiseSchedule sched = cfg.make_schedule();
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor* cond = nullptr;
    if (net.conditioning() != Conditioning::None) {
      if (conditions == nullptr || conditions->empty())
        throw DataError("generate_samples: conditional net needs conditions");
      cond = &(*conditions)[i % conditions->size()];
    }
    Tensor x;
    if (cfg.sampler_kind == "ddim2")
      x = sample_ddim2(net, shape, cond, sched, rng);
    else if (cfg.sampler_kind == "ddimK")
      x = sample_ddimK(net, shape, cond, sched, cfg.sample_K, rng);
    else if (cfg.sampler_kind == "ancestral")
      x = sample_ancestral(net, shape, cond, sched, rng);
    else
      throw ConfigError("unknown sample.kind: " + cfg.sampler_kind);
    out.push_back(denormalize(x, stats));
  }
  return out;
}

namespace {

struct LoadedRun {
  RunConfig cfg;
  Checkpoint ckpt;
  Dataset dataset;
};

LoadedRun load_run(const std::filesystem::path& run_dir) {
  LoadedRun lr;
  auto cfg_path = run_dir / "config.resolved";
  if (!std::filesystem::exists(cfg_path))
    throw DataError("run directory has no config.resolved: " +
                    run_dir.string());
  lr.cfg = parse_config_file(cfg_path);
  // rebuild the architecture exactly as training did
  TaskContext ctx = build_task(lr.cfg, load_dataset(lr.cfg.dataset_path));
  lr.dataset = std::move(ctx.dataset);
  lr.ckpt = load_checkpoint(run_dir / "ckpt_final", ctx.net_cfg, lr.cfg.seed);
  return lr;
}

void write_sample_outputs(const std::filesystem::path& run_dir,
                          const std::vector<Tensor>& samples) {
  // container with all samples
  Shape shape = samples.front().shape();
  Shape big;
  big.push_back(samples.size());
  big.insert(big.end(), shape.begin(), shape.end());
  Tensor all = Tensor::zeros(big);
  auto d = all.data_mut();
  std::size_t inner = samples.front().numel();
  for (std::size_t i = 0; i < samples.size(); ++i)
    std::copy(samples[i].data().begin(), samples[i].data().end(),
              d.begin() + i * inner);
  save_tensor(run_dir / "samples.bin", all);

  if (shape.size() == 1) {
    std::ofstream os(run_dir / "samples.csv");
    for (const Tensor& s : samples) {
      for (std::size_t i = 0; i < s.numel(); ++i)
        os << (i ? "," : "") << format_real(s[i]);
      os << "\n";
    }
  } else if (shape.size() == 3) {
    std::size_t count = std::min<std::size_t>(samples.size(), 4);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t c = 0; c < shape[0]; ++c)
        write_pgm(run_dir / ("sample_" + std::to_string(i) + "_ch" +
                             std::to_string(c) + ".pgm"),
                  take_channel(samples[i], c));
  }
}

}  // namespace

std::vector<Tensor> run_sample(const std::filesystem::path& run_dir,
                               std::size_t n_override) {
  LoadedRun lr = load_run(run_dir);
  std::size_t n = n_override > 0 ? n_override : lr.cfg.sample_n;
  Rng rng(Rng::derive(lr.cfg.seed, kStreamSample));
  const std::vector<Tensor>* conds =
      lr.dataset.conditional() ? &lr.dataset.conditions : nullptr;
  std::vector<Tensor> samples =
      generate_samples(*lr.ckpt.net, lr.ckpt.stats, lr.cfg, conds, n, rng);
  write_sample_outputs(run_dir, samples);
  return samples;
}

MetricsReport run_eval(const std::filesystem::path& run_dir,
                       const std::filesystem::path& dataset_dir,
                       std::size_t n_override) {
  LoadedRun lr = load_run(run_dir);
  Dataset ref = load_dataset(dataset_dir);
  if (ref.task != lr.cfg.task)
    throw DataError("eval: dataset task mismatch: " + ref.task);
  TaskContext ctx = build_task(lr.cfg, std::move(ref));

  std::size_t n = n_override > 0 ? n_override : lr.cfg.sample_n;
  Rng rng(Rng::derive(lr.cfg.seed, kStreamSample));
  const std::vector<Tensor>* conds =
      ctx.dataset.conditional() ? &ctx.dataset.conditions : nullptr;
  std::vector<Tensor> samples =
      generate_samples(*lr.ckpt.net, lr.ckpt.stats, lr.cfg, conds, n, rng);

  MetricsReport rep =
      evaluate(samples, ctx.dataset, ctx.eval_residual, lr.cfg.eval_subsample,
               Rng::derive(lr.cfg.seed, kStreamEval));
  std::ofstream os(run_dir / "metrics.txt");
  os << "violation_rate=" << format_real(rep.violation_rate) << "\n";
  os << "mean_abs_residual=" << format_real(rep.mean_abs_residual) << "\n";
  os << "energy_distance=" << format_real(rep.energy_distance) << "\n";
  return rep;
}

// --- ablation -------------------------------------------------------------------

namespace {

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return out;
}

Real mean_physics_from_csv(const std::filesystem::path& csv_path) {
  std::ifstream is(csv_path);
  if (!is) throw DataError("ablate: missing loss csv " + csv_path.string());
  std::string line;
  std::getline(is, line);  // header
  Real sum = 0.0;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string field;
    for (int i = 0; i < 4 && std::getline(ls, field, ','); ++i) {
    }
    sum += std::stod(field);
    ++rows;
  }
  return rows == 0 ? 0.0 : sum / static_cast<Real>(rows);
}

}  // namespace

std::vector<AblateRow> ablate_rows(const RunConfig& base,
                                   const std::string& axis,
                                   const std::vector<std::string>& values,
                                   std::size_t seeds) {
  if (values.empty()) throw ConfigError("ablate: empty value grid");
  if (seeds < 1) throw ConfigError("ablate: need at least one seed");
  std::vector<AblateRow> rows;
  for (const std::string& value : values) {
    for (std::size_t s = 0; s < seeds; ++s) {
      AblateRow row;
      row.axis = axis;
      row.value = value;
      row.seed = base.seed + s;
      try {
        RunConfig cfg = base;
        apply_override(cfg, axis + "=" + value);
        cfg.seed = base.seed + s;
        cfg.out_dir = base.out_dir + "/cell_" + sanitize(axis) + "_" +
                      sanitize(value) + "/seed_" + std::to_string(row.seed);
        std::filesystem::path run_dir = run_train(cfg);
        row.metrics = run_eval(run_dir, cfg.dataset_path);
        row.mean_physics_term = mean_physics_from_csv(run_dir / "loss.csv");
      } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void run_ablate(const RunConfig& base, const std::string& axis,
                const std::vector<std::string>& values, std::size_t seeds,
                const std::filesystem::path& csv_out) {
  std::vector<AblateRow> rows = ablate_rows(base, axis, values, seeds);
  if (csv_out.has_parent_path())
    std::filesystem::create_directories(csv_out.parent_path());
  std::ofstream os(csv_out);
  if (!os) throw DataError("ablate: cannot write " + csv_out.string());
  os << "axis,value,seed,violation_rate,mean_abs_residual,energy_distance,"
        "mean_physics_term,status\n";
  for (const AblateRow& r : rows) {
    os << r.axis << "," << r.value << "," << r.seed << ","
       << format_real(r.metrics.violation_rate) << ","
       << format_real(r.metrics.mean_abs_residual) << ","
       << format_real(r.metrics.energy_distance) << ","
       << format_real(r.mean_physics_term) << "," << r.status << "\n";
  }
}

void write_pgm(const std::filesystem::path& path, const Tensor& field) {
  if (field.ndim() != 2)
    throw ShapeError("write_pgm: expected a 2-D field, got " +
                     shape_str(field.shape()));
  Real lo = field[0], hi = field[0];
  for (Real v : field.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Real scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_pgm: cannot open " + path.string());
  os << "P5\n" << field.shape()[1] << " " << field.shape()[0] << "\n255\n";
  for (Real v : field.data()) {
    unsigned char byte =
        static_cast<unsigned char>(std::lround((v - lo) * scale));
    os.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

}  // namespace pild
