#include "pild/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pild/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace pild {

namespace {

constexpr char kMagic[4] = {'P', 'I', 'L', 'D'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kElemF32 = 1;
constexpr std::uint8_t kElemF64 = 2;

template <typename T>
void write_le(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError(std::string("tensor container: truncated ") + what);
  return v;
}

}  // namespace

void save_tensor(const std::filesystem::path& path, const Tensor& t,
                 bool as_f32) {
  if (!t.defined() || t.shape().empty())
    throw DataError("save_tensor: undefined or empty-shaped tensor");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("save_tensor: cannot open " + path.string());
  os.write(kMagic, 4);
  write_le<std::uint16_t>(os, kVersion);
  write_le<std::uint8_t>(os, as_f32 ? kElemF32 : kElemF64);
  write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.ndim()));
  for (std::size_t d : t.shape()) write_le<std::uint64_t>(os, d);
  if (as_f32) {
    for (Real v : t.data()) write_le<float>(os, static_cast<float>(v));
  } else {
    for (Real v : t.data()) write_le<double>(os, v);
  }
  if (!os) throw DataError("save_tensor: write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_tensor: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("load_tensor: bad magic in " + path.string());
  auto version = read_le<std::uint16_t>(is, "version");
  if (version != kVersion)
    throw DataError("load_tensor: unsupported container version " +
                    std::to_string(version));
  auto elem = read_le<std::uint8_t>(is, "element code");
  if (elem != kElemF32 && elem != kElemF64)
    throw DataError("load_tensor: unknown element code " +
                    std::to_string(elem));
  auto ndim = read_le<std::uint8_t>(is, "ndim");
  if (ndim == 0) throw DataError("load_tensor: empty dims list");
  Shape shape(ndim);
  std::size_t numel = 1;
  for (auto& d : shape) {
    d = static_cast<std::size_t>(read_le<std::uint64_t>(is, "dims"));
    if (d == 0) throw DataError("load_tensor: zero-sized dimension");
    numel *= d;
  }
  std::vector<Real> values(numel);
  if (elem == kElemF32) {
    for (std::size_t i = 0; i < numel; ++i)
      values[i] = static_cast<Real>(read_le<float>(is, "payload"));
  } else {
    for (std::size_t i = 0; i < numel; ++i)
      values[i] = read_le<double>(is, "payload");
  }
  return Tensor::from(std::move(shape), std::move(values));
}

// --- normalization ------------------------------------------------------------

namespace {

void check_stats(const Tensor& x, const NormStats& stats, const char* op) {
  if (stats.channels() == 0)
    throw DataError(std::string(op) + ": empty normalization stats");
  if (stats.channels() != 1 && stats.channels() != x.shape()[0])
    throw ShapeError(std::string(op) + ": " +
                     std::to_string(stats.channels()) +
                     " stat channels incompatible with " + shape_str(x.shape()));
}

}  // namespace

NormStats compute_stats(const std::vector<Tensor>& samples,
                        std::size_t channels) {
  if (samples.empty()) throw DataError("compute_stats: no samples");
  NormStats st;
  st.mean.assign(channels, 0.0);
  st.stddev.assign(channels, 0.0);
  std::size_t inner = samples.front().numel() / channels;
  std::vector<std::size_t> count(channels, 0);
  for (const Tensor& s : samples)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        st.mean[c] += s[c * inner + i];
        ++count[c];
      }
  for (std::size_t c = 0; c < channels; ++c) st.mean[c] /= count[c];
  for (const Tensor& s : samples)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        Real d = s[c * inner + i] - st.mean[c];
        st.stddev[c] += d * d;
      }
  for (std::size_t c = 0; c < channels; ++c)
    st.stddev[c] = std::max(std::sqrt(st.stddev[c] / count[c]), 1e-12);
  return st;
}

Tensor normalize(const Tensor& x, const NormStats& stats) {
  check_stats(x, stats, "normalize");
  Tensor out = Tensor::zeros(x.shape());
  std::size_t c = stats.channels();
  std::size_t inner = x.numel() / c;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < inner; ++i)
      out.at(ch * inner + i) =
          (x[ch * inner + i] - stats.mean[ch]) / stats.stddev[ch];
  return out;
}

Tensor denormalize(const Tensor& x, const NormStats& stats) {
  check_stats(x, stats, "denormalize");
  Tensor out = Tensor::zeros(x.shape());
  std::size_t c = stats.channels();
  std::size_t inner = x.numel() / c;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < inner; ++i)
      out.at(ch * inner + i) =
          x[ch * inner + i] * stats.stddev[ch] + stats.mean[ch];
  return out;
}

Tensor denormalize_on_tape(const Tensor& x, const NormStats& stats) {
  check_stats(x, stats, "denormalize");
  if (stats.channels() == 1)
    return add_scalar(mul_scalar(x, stats.stddev[0]), stats.mean[0]);
  Tensor sd = Tensor::from({stats.channels()},
                           {stats.stddev.begin(), stats.stddev.end()});
  Tensor mu = Tensor::from({stats.channels()},
                           {stats.mean.begin(), stats.mean.end()});
  return channel_add(channel_mul(x, sd), mu);
}

// --- toy region -----------------------------------------------------------------

namespace {

struct Box {
  Real xmin, xmax, ymin, ymax;
};

// Bounding box of a bounded 2-D polytope {A x <= b} via vertex enumeration.
Box region_bounding_box(const InequalitySet& ineq) {
  if (ineq.dim() != 2)
    throw ConfigError("gen_parallelogram: only 2-D regions are supported");
  std::size_t m = ineq.rows();
  auto a = ineq.a.data();
  auto b = ineq.b.data();
  std::vector<std::pair<Real, Real>> verts;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      Real det = a[2 * i] * a[2 * j + 1] - a[2 * i + 1] * a[2 * j];
      if (std::abs(det) < 1e-12) continue;
      Real x = (b[i] * a[2 * j + 1] - b[j] * a[2 * i + 1]) / det;
      Real y = (a[2 * i] * b[j] - a[2 * j] * b[i]) / det;
      bool feasible = true;
      for (std::size_t r = 0; r < m && feasible; ++r)
        feasible = a[2 * r] * x + a[2 * r + 1] * y <= b[r] + 1e-9;
      if (feasible) verts.emplace_back(x, y);
    }
  if (verts.size() < 3)
    throw DataError("gen_parallelogram: region is empty or unbounded");
  Box box{verts[0].first, verts[0].first, verts[0].second, verts[0].second};
  for (auto& [x, y] : verts) {
    box.xmin = std::min(box.xmin, x);
    box.xmax = std::max(box.xmax, x);
    box.ymin = std::min(box.ymin, y);
    box.ymax = std::max(box.ymax, y);
  }
  return box;
}

}  // namespace

Dataset gen_parallelogram(std::size_t n, const InequalitySet& ineq,
                          std::uint64_t seed) {
  if (n < 1) throw ConfigError("gen_parallelogram: n must be >= 1");
  validate_inequality_set(ineq);
  Box box = region_bounding_box(ineq);
  auto a = ineq.a.data();
  auto b = ineq.b.data();
  std::size_t m = ineq.rows();

  Dataset ds;
  ds.task = "toy";
  ds.seed = seed;
  ds.samples.reserve(n);
  std::size_t proposals = 0, accepted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(Rng::derive(seed, i));
    for (;;) {
      ++proposals;
      Real x = rng.uniform(box.xmin, box.xmax);
      Real y = rng.uniform(box.ymin, box.ymax);
      bool inside = true;
      for (std::size_t r = 0; r < m && inside; ++r)
        inside = a[2 * r] * x + a[2 * r + 1] * y <= b[r];
      if (inside) {
        ++accepted;
        ds.samples.push_back(Tensor::from({2}, {x, y}));
        break;
      }
      if (proposals >= 100000 &&
          static_cast<Real>(accepted) < 0.01 * static_cast<Real>(proposals))
        throw DataError(
            "gen_parallelogram: acceptance rate below 1%, degenerate region");
    }
  }
  ds.stats = compute_stats(ds.samples, 2);
  return ds;
}

// --- permeability fields -----------------------------------------------------

Tensor gen_permeability(std::size_t s, Real corr_len, std::uint64_t seed) {
  if (!(corr_len > 0.0 && corr_len < 1.0))
    throw ConfigError("gen_permeability: corr_len must be in (0, 1)");
  Rng rng(seed);
  std::vector<Real> white(s * s);
  for (Real& v : white) v = rng.normal();

  Real sigma = corr_len * static_cast<Real>(s - 1);  // nodes
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<Real> kernel(2 * radius + 1);
  for (int d = -radius; d <= radius; ++d)
    kernel[d + radius] = std::exp(-0.5 * d * d / (sigma * sigma));

  // separable smoothing with per-node variance renormalization
  auto smooth_axis = [&](const std::vector<Real>& in, bool rows) {
    std::vector<Real> out(s * s, 0.0);
    std::vector<Real> wsum2(s * s, 0.0);
    int si = static_cast<int>(s);
    for (int i = 0; i < si; ++i)
      for (int j = 0; j < si; ++j) {
        Real acc = 0.0, w2 = 0.0;
        for (int d = -radius; d <= radius; ++d) {
          int q = (rows ? i : j) + d;
          if (q < 0 || q >= si) continue;
          Real w = kernel[d + radius];
          std::size_t idx = rows ? static_cast<std::size_t>(q) * s + j
                                 : static_cast<std::size_t>(i) * s + q;
          acc += w * in[idx];
          w2 += w * w;
        }
        out[static_cast<std::size_t>(i) * s + j] = acc;
        wsum2[static_cast<std::size_t>(i) * s + j] = w2;
      }
    for (std::size_t k = 0; k < out.size(); ++k) out[k] /= std::sqrt(wsum2[k]);
    return out;
  };
  std::vector<Real> field = smooth_axis(smooth_axis(white, true), false);

  Tensor k = Tensor::zeros({s, s});
  for (std::size_t i = 0; i < field.size(); ++i) k.at(i) = std::exp(field[i]);
  return k;
}

// --- Darcy solver ----------------------------------------------------------------

namespace {

/// Matrix-free application of the finite-volume operator: for each node,
/// sum of face conductances times pressure differences. Face lengths are
/// halved along boundary rows/columns; this makes the operator symmetric
/// with constants in its null space.
struct DarcyOperator {
  std::size_t s;
  std::vector<Real> ke, kn;  // conductance of faces to (i+1,j) and (i,j+1)

  DarcyOperator(const Tensor& k, std::size_t s_) : s(s_) {
    ke.assign(s * s, 0.0);
    kn.assign(s * s, 0.0);
    auto kd = k.data();
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        if (i + 1 < s) {
          Real len = (j == 0 || j == s - 1) ? 0.5 : 1.0;
          ke[i * s + j] =
              len * face_permeability(kd[i * s + j], kd[(i + 1) * s + j]);
        }
        if (j + 1 < s) {
          Real len = (i == 0 || i == s - 1) ? 0.5 : 1.0;
          kn[i * s + j] =
              len * face_permeability(kd[i * s + j], kd[i * s + j + 1]);
        }
      }
  }

  void apply(const std::vector<Real>& p, std::vector<Real>& out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        std::size_t c = i * s + j;
        if (i + 1 < s) {
          Real f = ke[c] * (p[c] - p[c + s]);
          out[c] += f;
          out[c + s] -= f;
        }
        if (j + 1 < s) {
          Real f = kn[c] * (p[c] - p[c + 1]);
          out[c] += f;
          out[c + 1] -= f;
        }
      }
  }

  std::vector<Real> diagonal() const {
    std::vector<Real> d(s * s, 0.0);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        std::size_t c = i * s + j;
        if (i + 1 < s) {
          d[c] += ke[c];
          d[c + s] += ke[c];
        }
        if (j + 1 < s) {
          d[c] += kn[c];
          d[c + 1] += kn[c];
        }
      }
    return d;
  }
};

void project_mean(std::vector<Real>& v) {
  Real m = 0.0;
  for (Real x : v) m += x;
  m /= static_cast<Real>(v.size());
  for (Real& x : v) x -= m;
}

Real dot(const std::vector<Real>& a, const std::vector<Real>& b) {
  Real s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

Tensor solve_darcy(const Tensor& k, const DarcyProblem& prob) {
  std::size_t s = prob.s;
  if (k.ndim() != 2 || k.shape()[0] != s || k.shape()[1] != s)
    throw ShapeError("solve_darcy: k " + shape_str(k.shape()) +
                     " does not match grid " + std::to_string(s));
  for (Real v : k.data())
    if (!(v > 0.0)) throw NumericError("solve_darcy: non-positive permeability");
  validate_darcy_problem(prob);

  std::size_t n = s * s;
  Real h = prob.spacing();
  DarcyOperator op(k, s);

  // rhs_ij = w_ij h^2 f_ij (trapezoid control volumes)
  std::vector<Real> rhs(n);
  auto fd = prob.forcing.data();
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      Real w = 1.0;
      if (i == 0 || i == s - 1) w *= 0.5;
      if (j == 0 || j == s - 1) w *= 0.5;
      rhs[i * s + j] = w * h * h * fd[i * s + j];
    }
  project_mean(rhs);

  // Jacobi-preconditioned CG on the mean-zero subspace
  std::vector<Real> diag = op.diagonal();
  std::vector<Real> p_sol(n, 0.0), r = rhs, z(n), d(n), q(n);
  Real rhs_norm = std::sqrt(dot(rhs, rhs));
  if (rhs_norm == 0.0) return Tensor::zeros({s, s});

  for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / diag[i];
  project_mean(z);
  d = z;
  Real rz = dot(r, z);
  std::size_t max_iter = 10 * n;
  Real rel = 1.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    rel = std::sqrt(dot(r, r)) / rhs_norm;
    if (rel <= 1e-12) break;
    op.apply(d, q);
    Real alpha = rz / dot(d, q);
    for (std::size_t i = 0; i < n; ++i) {
      p_sol[i] += alpha * d[i];
      r[i] -= alpha * q[i];
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / diag[i];
    project_mean(z);
    Real rz_new = dot(r, z);
    Real beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) d[i] = z[i] + beta * d[i];
  }
  rel = std::sqrt(dot(r, r)) / rhs_norm;
  if (rel > 1e-10)
    throw NumericError("solve_darcy: CG stalled at relative residual " +
                       std::to_string(rel));

  project_mean(p_sol);
  return Tensor::from({s, s}, std::move(p_sol));
}

Dataset gen_darcy_dataset(std::size_t n, std::size_t s, Real corr_len,
                          const DarcyProblem& prob, std::uint64_t seed) {
  if (n < 1) throw ConfigError("gen_darcy_dataset: n must be >= 1");
  if (prob.s != s)
    throw ConfigError("gen_darcy_dataset: problem grid does not match s");
  Dataset ds;
  ds.task = "darcy";
  ds.seed = seed;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor k = gen_permeability(s, corr_len, Rng::derive(seed, i));
    Tensor p;
    try {
      p = solve_darcy(k, prob);
    } catch (const NumericError& e) {
      throw NumericError("gen_darcy_dataset: sample " + std::to_string(i) +
                         ": " + e.what());
    }
    Tensor sample = Tensor::zeros({2, s, s});
    auto d = sample.data_mut();
    std::copy(k.data().begin(), k.data().end(), d.begin());
    std::copy(p.data().begin(), p.data().end(), d.begin() + s * s);
    ds.samples.push_back(sample);
  }
  ds.stats = compute_stats(ds.samples, 2);
  return ds;
}

Dataset gen_oscillator_dataset(std::size_t n, const OscillatorSpec& spec,
                               std::uint64_t seed) {
  if (n < 1) throw ConfigError("gen_oscillator_dataset: n must be >= 1");
  validate_oscillator_spec(spec);
  Dataset ds;
  ds.task = "oscillator";
  ds.seed = seed;
  ds.samples.reserve(n);
  ds.conditions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(Rng::derive(seed, i));
    Real a = rng.normal();
    Real b = rng.normal();
    Tensor traj = Tensor::zeros({spec.length});
    for (std::size_t j = 0; j < spec.length; ++j) {
      Real t = spec.omega * spec.dt * static_cast<Real>(j);
      traj.at(j) = a * std::cos(t) + b * std::sin(t);
    }
    ds.samples.push_back(traj);
    ds.conditions.push_back(Tensor::from({2}, {traj[0], traj[1]}));
  }
  ds.stats = compute_stats(ds.samples, 1);
  return ds;
}

// --- persistence --------------------------------------------------------------

namespace {

Tensor stack_samples(const std::vector<Tensor>& list) {
  Shape shape = list.front().shape();
  Shape out_shape;
  out_shape.push_back(list.size());
  out_shape.insert(out_shape.end(), shape.begin(), shape.end());
  Tensor out = Tensor::zeros(out_shape);
  auto od = out.data_mut();
  std::size_t inner = list.front().numel();
  for (std::size_t i = 0; i < list.size(); ++i)
    std::copy(list[i].data().begin(), list[i].data().end(),
              od.begin() + i * inner);
  return out;
}

std::vector<Tensor> unstack_samples(const Tensor& big) {
  if (big.ndim() < 2) throw DataError("dataset container must have rank >= 2");
  std::size_t n = big.shape()[0];
  Shape inner_shape(big.shape().begin() + 1, big.shape().end());
  std::size_t inner = big.numel() / n;
  std::vector<Tensor> out;
  out.reserve(n);
  auto d = big.data();
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(Tensor::from(inner_shape,
                               {d.begin() + i * inner, d.begin() + (i + 1) * inner}));
  return out;
}

std::string join_reals(const std::vector<Real>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
    os << buf;
  }
  return os.str();
}

std::vector<Real> split_reals(const std::string& s) {
  std::istringstream is(s);
  std::vector<Real> out;
  Real v;
  while (is >> v) out.push_back(v);
  return out;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  if (ds.samples.empty()) throw DataError("save_dataset: empty dataset");
  std::filesystem::create_directories(dir);
  save_tensor(dir / "samples.bin", stack_samples(ds.samples));
  if (ds.conditional())
    save_tensor(dir / "conditions.bin", stack_samples(ds.conditions));

  std::ofstream os(dir / "manifest.txt");
  if (!os) throw DataError("save_dataset: cannot write manifest");
  os << "format=pild-dataset-v1\n";
  os << "task=" << ds.task << "\n";
  os << "n=" << ds.size() << "\n";
  os << "seed=" << ds.seed << "\n";
  os << "conditional=" << (ds.conditional() ? 1 : 0) << "\n";
  os << "stats_mean=" << join_reals(ds.stats.mean) << "\n";
  os << "stats_std=" << join_reals(ds.stats.stddev) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.txt");
  if (!is)
    throw DataError("load_dataset: missing manifest in " + dir.string());
  Dataset ds;
  bool conditional = false;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("load_dataset: malformed manifest line: " + line);
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "format") {
      if (val != "pild-dataset-v1")
        throw DataError("load_dataset: unsupported dataset format " + val);
    } else if (key == "task") {
      ds.task = val;
    } else if (key == "seed") {
      ds.seed = std::stoull(val);
    } else if (key == "conditional") {
      conditional = val == "1";
    } else if (key == "stats_mean") {
      ds.stats.mean = split_reals(val);
    } else if (key == "stats_std") {
      ds.stats.stddev = split_reals(val);
    }
    // "n" is implied by the container
  }
  ds.samples = unstack_samples(load_tensor(dir / "samples.bin"));
  if (conditional)
    ds.conditions = unstack_samples(load_tensor(dir / "conditions.bin"));
  if (ds.stats.mean.empty() || ds.stats.mean.size() != ds.stats.stddev.size())
    throw DataError("load_dataset: missing or inconsistent stats");
  return ds;
}

std::string file_hash_hex(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("file_hash_hex: cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char c;
  while (is.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pild
