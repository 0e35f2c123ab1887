#include "langevinmix/environment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "langevinmix/stats.hpp"

namespace lmx {

namespace {

std::size_t sample_categorical(std::span<const double> probs, double u) {
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw EnvironmentError("truncated trajectory file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

Matrix mat_mul(const Matrix& A, const Matrix& B) {
  const std::size_t n = A.size(), k = B.size(), m = B.empty() ? 0 : B[0].size();
  Matrix C(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double a = A[i][l];
      if (a == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) C[i][j] += a * B[l][j];
    }
  return C;
}

Matrix mat_pow(const Matrix& A, std::size_t n) {
  const std::size_t s = A.size();
  Matrix result(s, std::vector<double>(s, 0.0));
  for (std::size_t i = 0; i < s; ++i) result[i][i] = 1.0;
  Matrix base = A;
  while (n > 0) {
    if (n & 1U) result = mat_mul(result, base);
    n >>= 1U;
    if (n > 0) base = mat_mul(base, base);
  }
  return result;
}

std::vector<double> stationary_distribution(const Matrix& P) {
  const std::size_t s = P.size();
  if (s == 0) throw EnvironmentError("empty transition matrix");
  // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
  std::vector<std::vector<long double>> A(s, std::vector<long double>(s + 1, 0.0L));
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) A[i][j] = P[j][i] - (i == j ? 1.0L : 0.0L);
  for (std::size_t j = 0; j < s; ++j) A[s - 1][j] = 1.0L;
  A[s - 1][s] = 1.0L;
  for (std::size_t c = 0; c < s; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < s; ++r)
      if (std::fabs(A[r][c]) > std::fabs(A[piv][c])) piv = r;
    if (std::fabs(A[piv][c]) < 1e-300L) throw EnvironmentError("transition matrix is reducible");
    std::swap(A[c], A[piv]);
    for (std::size_t r = 0; r < s; ++r) {
      if (r == c) continue;
      const long double f = A[r][c] / A[c][c];
      if (f == 0.0L) continue;
      for (std::size_t k = c; k <= s; ++k) A[r][k] -= f * A[c][k];
    }
  }
  std::vector<double> pi(s);
  long double total = 0.0L;
  for (std::size_t i = 0; i < s; ++i) {
    const long double v = std::max(0.0L, A[i][s] / A[i][i]);
    pi[i] = static_cast<double>(v);
    total += v;
  }
  for (auto& p : pi) p = static_cast<double>(p / total);
  return pi;
}

FiniteMarkovParams FiniteMarkovParams::make(std::vector<std::vector<double>> states, Matrix P) {
  FiniteMarkovParams out;
  out.states = std::move(states);
  out.P = std::move(P);
  if (out.P.size() != out.states.size())
    throw EnvironmentError("transition matrix size differs from the number of states");
  for (const auto& row : out.P)
    if (row.size() != out.P.size()) throw EnvironmentError("transition matrix is not square");
  out.pi0 = stationary_distribution(out.P);
  out.validate();
  return out;
}

FiniteMarkovParams FiniteMarkovParams::symmetric_two_state(double stay, double low,
                                                           double high) {
  return make({{low}, {high}}, {{stay, 1.0 - stay}, {1.0 - stay, stay}});
}

void FiniteMarkovParams::validate() const {
  const std::size_t s = states.size();
  if (s == 0) throw EnvironmentError("finite Markov stream needs at least one state");
  const std::size_t m = states[0].size();
  if (m == 0) throw EnvironmentError("states must have positive dimension");
  for (const auto& st : states) {
    if (st.size() != m) throw EnvironmentError("states have inconsistent dimensions");
    for (double x : st)
      if (!std::isfinite(x)) throw EnvironmentError("state coordinates must be finite");
  }
  if (P.size() != s || pi0.size() != s) throw EnvironmentError("P and pi0 must match the states");
  for (const auto& row : P) {
    if (row.size() != s) throw EnvironmentError("transition matrix is not square");
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw EnvironmentError("transition probabilities must be in [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw EnvironmentError("transition matrix rows must sum to 1");
  }
  double total = 0.0;
  for (double p : pi0) {
    if (!(p >= 0.0)) throw EnvironmentError("stationary distribution must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-10) throw EnvironmentError("stationary distribution must sum to 1");
  for (std::size_t j = 0; j < s; ++j) {
    double v = 0.0;
    for (std::size_t i = 0; i < s; ++i) v += pi0[i] * P[i][j];
    if (std::abs(v - pi0[j]) > 1e-10) throw EnvironmentError("pi0 is not stationary for P");
  }
}

double FiniteMarkovParams::max_norm() const {
  double m = 0.0;
  for (const auto& s : states) m = std::max(m, norm(s));
  return m;
}

std::string to_string(StreamKind kind) {
  switch (kind) {
    case StreamKind::finite_markov: return "finite_markov";
    case StreamKind::iid_bounded: return "iid_bounded";
    case StreamKind::bounded_moving_average: return "bounded_moving_average";
  }
  return "unknown";
}

double MixingCurve::at(std::size_t n) const {
  if (n >= values.size())
    throw EnvironmentError("mixing curve evaluated at lag " + std::to_string(n) +
                           " beyond its range " + std::to_string(values.size()));
  return values[n];
}

bool MixingCurve::is_valid(double slack) const {
  for (std::size_t n = 0; n < values.size(); ++n) {
    if (!(values[n] >= -slack && values[n] <= 0.25 + slack)) return false;
    if (n > 0 && values[n] > values[n - 1] + slack) return false;
  }
  return true;
}

nlohmann::json MixingCurve::to_json() const {
  return {{"exact", exact}, {"values", values}};
}

DataStream::DataStream(FiniteMarkovParams p)
    : kind_(StreamKind::finite_markov),
      m_(static_cast<int>(p.dim())),
      M_(0.0),
      params_(std::move(p)) {
  std::get<FiniteMarkovParams>(params_).validate();
  M_ = std::get<FiniteMarkovParams>(params_).max_norm();
}

DataStream::DataStream(IidBoundedParams p)
    : kind_(StreamKind::iid_bounded), m_(p.m), M_(0.0), params_(p) {
  if (p.m < 1 || !(p.half_width >= 0.0) || !std::isfinite(p.half_width))
    throw EnvironmentError("iid stream needs m >= 1 and a finite half_width >= 0");
  M_ = p.shape == IidBoundedParams::Shape::box ? p.half_width * std::sqrt(static_cast<double>(p.m))
                                               : p.half_width;
}

DataStream::DataStream(MovingAverageParams p)
    : kind_(StreamKind::bounded_moving_average), m_(p.m), M_(p.clamp), params_(p) {
  if (p.m < 1 || p.window < 1 || !(p.half_width >= 0.0) || !(p.clamp > 0.0) ||
      !std::isfinite(p.clamp))
    throw EnvironmentError("moving-average stream needs m, window >= 1, half_width >= 0, clamp > 0");
}

void DataStream::draw_innovation(Substream& rng, std::span<double> out) const {
  if (const auto* p = iid(); p && p->shape == IidBoundedParams::Shape::ball) {
    double len = 0.0;
    do {
      for (auto& x : out) x = rng.normal();
      len = norm(out);
    } while (len == 0.0);
    const double rad = p->half_width * std::pow(rng.uniform(), 1.0 / p->m);
    for (auto& x : out) x *= rad / len;
    return;
  }
  const double w = iid() ? iid()->half_width : moving_average()->half_width;
  for (auto& x : out) x = rng.uniform(-w, w);
}

void DataStream::emit_moving_average(const StreamState& state, std::span<double> out) const {
  const auto& p = *moving_average();
  const auto m = static_cast<std::size_t>(p.m);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < static_cast<std::size_t>(p.window); ++k)
    for (std::size_t i = 0; i < m; ++i) out[i] += state.window[k * m + i];
  for (auto& x : out) x /= p.window;
  const double len = norm(out);
  if (len > p.clamp)
    for (auto& x : out) x *= p.clamp / len;
}

StreamState DataStream::initial_state(std::uint64_t seed) const {
  StreamState s;
  s.rng = Substream(seed);
  if (const auto* f = finite()) {
    s.current = sample_categorical(f->pi0, s.rng.uniform());
  } else if (const auto* ma = moving_average()) {
    const auto m = static_cast<std::size_t>(ma->m);
    s.window.assign(m * static_cast<std::size_t>(ma->window), 0.0);
    for (int k = 0; k < 10 * ma->window; ++k) {
      draw_innovation(s.rng, std::span<double>(s.window).subspan(s.head * m, m));
      s.head = (s.head + 1) % static_cast<std::size_t>(ma->window);
    }
  }
  return s;
}

void DataStream::advance(StreamState& state, std::span<double> out) const {
  switch (kind_) {
    case StreamKind::finite_markov: {
      const auto& f = *finite();
      std::copy(f.states[state.current].begin(), f.states[state.current].end(), out.begin());
      state.current = sample_categorical(f.P[state.current], state.rng.uniform());
      break;
    }
    case StreamKind::iid_bounded:
      draw_innovation(state.rng, out);
      break;
    case StreamKind::bounded_moving_average: {
      const auto& p = *moving_average();
      const auto m = static_cast<std::size_t>(p.m);
      draw_innovation(state.rng, std::span<double>(state.window).subspan(state.head * m, m));
      state.head = (state.head + 1) % static_cast<std::size_t>(p.window);
      emit_moving_average(state, out);
      break;
    }
  }
  ++state.t;
}

void DataStream::sample_stationary(Substream& rng, std::span<double> out) const {
  switch (kind_) {
    case StreamKind::finite_markov: {
      const auto& f = *finite();
      const auto& s = f.states[sample_categorical(f.pi0, rng.uniform())];
      std::copy(s.begin(), s.end(), out.begin());
      break;
    }
    case StreamKind::iid_bounded:
      draw_innovation(rng, out);
      break;
    case StreamKind::bounded_moving_average: {
      const auto& p = *moving_average();
      StreamState tmp;
      const auto m = static_cast<std::size_t>(p.m);
      tmp.window.assign(m * static_cast<std::size_t>(p.window), 0.0);
      for (int k = 0; k < p.window; ++k)
        draw_innovation(rng, std::span<double>(tmp.window).subspan(k * m, m));
      emit_moving_average(tmp, out);
      break;
    }
  }
}

std::pair<DataPoint, StreamState> DataStream::next(StreamState state) const {
  DataPoint y(static_cast<std::size_t>(m_));
  advance(state, y.coords);
  return {std::move(y), std::move(state)};
}

std::pair<DataPoint, StreamState> stream_next(const DataStream& stream, StreamState state) {
  return stream.next(std::move(state));
}

MixingCurve DataStream::mixing_curve(std::size_t n_max) const {
  MixingCurve c;
  c.values.resize(n_max + 1);
  switch (kind_) {
    case StreamKind::finite_markov: {
      const auto& f = *finite();
      for (std::size_t n = 0; n <= n_max; ++n) c.values[n] = exact_alpha_finite(f, n);
      c.exact = true;
      break;
    }
    case StreamKind::iid_bounded:
      std::fill(c.values.begin(), c.values.end(), 0.0);
      c.values[0] = iid()->half_width > 0.0 ? 0.25 : 0.0;
      c.exact = true;
      break;
    case StreamKind::bounded_moving_average: {
      const auto w = static_cast<std::size_t>(moving_average()->window);
      for (std::size_t n = 0; n <= n_max; ++n) c.values[n] = n < w ? 0.25 : 0.0;
      c.exact = false;
      break;
    }
  }
  return c;
}

double DataStream::stationary_mean(std::size_t coord) const {
  if (const auto* f = finite()) {
    double m = 0.0;
    for (std::size_t i = 0; i < f->size(); ++i) m += f->pi0[i] * f->states[i][coord];
    return m;
  }
  return 0.0;
}

double DataStream::stationary_variance(std::size_t coord) const {
  if (const auto* f = finite()) {
    const double mu = stationary_mean(coord);
    double v = 0.0;
    for (std::size_t i = 0; i < f->size(); ++i) {
      const double dlt = f->states[i][coord] - mu;
      v += f->pi0[i] * dlt * dlt;
    }
    return v;
  }
  if (const auto* p = iid()) {
    const double w = p->half_width;
    return p->shape == IidBoundedParams::Shape::box ? w * w / 3.0 : w * w / (p->m + 2.0);
  }
  const auto& p = *moving_average();
  if (p.half_width * std::sqrt(static_cast<double>(p.m)) > p.clamp)
    throw EnvironmentError("moving-average variance has no closed form when the clamp is active");
  return p.half_width * p.half_width / (3.0 * p.window);
}

std::vector<double> DataStream::autocorrelation(std::size_t max_lag, std::size_t coord) const {
  std::vector<double> rho(max_lag + 1, 0.0);
  rho[0] = 1.0;
  if (const auto* f = finite()) {
    const double mu = stationary_mean(coord), var = stationary_variance(coord);
    if (var == 0.0) return rho;
    const std::size_t s = f->size();
    Matrix Pl = mat_pow(f->P, 0);
    for (std::size_t l = 1; l <= max_lag; ++l) {
      Pl = mat_mul(Pl, f->P);
      double c = 0.0;
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j)
          c += f->pi0[i] * (f->states[i][coord] - mu) * Pl[i][j] * (f->states[j][coord] - mu);
      rho[l] = c / var;
    }
  } else if (const auto* p = moving_average()) {
    stationary_variance(coord);
    for (std::size_t l = 1; l <= max_lag; ++l)
      rho[l] = l < static_cast<std::size_t>(p->window)
                   ? static_cast<double>(p->window - static_cast<int>(l)) / p->window
                   : 0.0;
  }
  return rho;
}

nlohmann::json DataStream::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind_);
  j["m"] = m_;
  j["M"] = M_;
  if (const auto* f = finite()) {
    j["states"] = f->states;
    j["P"] = f->P;
    j["pi0"] = f->pi0;
  } else if (const auto* p = iid()) {
    j["half_width"] = p->half_width;
    j["shape"] = p->shape == IidBoundedParams::Shape::box ? "box" : "ball";
  } else if (const auto* p = moving_average()) {
    j["window"] = p->window;
    j["half_width"] = p->half_width;
    j["clamp"] = p->clamp;
  }
  return j;
}

double exact_alpha_finite(const FiniteMarkovParams& params, std::size_t n) {
  const std::size_t s = params.size();
  if (s > 16) throw EnvironmentError("exact alpha supports at most 16 states");
  const auto& pi = params.pi0;
  // D_ij = P(Y_0 = i, Y_n = j) - pi_i pi_j, formed from (P - 1 pi)^n to avoid cancellation.
  std::vector<std::vector<long double>> D(s, std::vector<long double>(s, 0.0L));
  if (n == 0) {
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j)
        D[i][j] = (i == j ? static_cast<long double>(pi[i]) : 0.0L) -
                  static_cast<long double>(pi[i]) * pi[j];
  } else {
    std::vector<std::vector<long double>> E(s, std::vector<long double>(s)), R(s, std::vector<long double>(s, 0.0L));
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) E[i][j] = static_cast<long double>(params.P[i][j]) - pi[j];
    auto mul = [s](const auto& A, const auto& B) {
      std::vector<std::vector<long double>> C(s, std::vector<long double>(s, 0.0L));
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t k = 0; k < s; ++k)
          for (std::size_t j = 0; j < s; ++j) C[i][j] += A[i][k] * B[k][j];
      return C;
    };
    for (std::size_t i = 0; i < s; ++i) R[i][i] = 1.0L;
    auto base = E;
    for (std::size_t k = n; k > 0; k >>= 1U) {
      if (k & 1U) R = mul(R, base);
      if (k > 1) base = mul(base, base);
    }
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) D[i][j] = pi[i] * R[i][j];
  }
  // For each event A the best B collects the positive column sums; Gray-code walk over A.
  std::vector<long double> col(s, 0.0L);
  long double best = 0.0L;
  const std::uint64_t count = 1ULL << s;
  std::uint64_t prev = 0;
  for (std::uint64_t g = 1; g < count; ++g) {
    const std::uint64_t gray = g ^ (g >> 1U);
    const std::uint64_t changed = gray ^ prev;
    const auto i = static_cast<std::size_t>(std::countr_zero(changed));
    const long double sign = (gray & changed) ? 1.0L : -1.0L;
    for (std::size_t j = 0; j < s; ++j) col[j] += sign * D[i][j];
    long double pos = 0.0L;
    for (std::size_t j = 0; j < s; ++j)
      if (col[j] > 0.0L) pos += col[j];
    best = std::max(best, pos);
    prev = gray;
  }
  return static_cast<double>(best);
}

std::size_t PartitionSpec::cell_of(double x) const {
  return static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), x) - cuts.begin());
}

PartitionSpec quantile_partition(std::span<const double> trace, std::size_t k,
                                 std::size_t coord, std::size_t cells) {
  if (k == 0 || coord >= k || trace.size() % k != 0) throw EnvironmentError("bad trace layout");
  if (cells < 2) throw EnvironmentError("partition needs at least 2 cells");
  const std::size_t n = trace.size() / k;
  std::vector<double> col(n);
  for (std::size_t t = 0; t < n; ++t) col[t] = trace[t * k + coord];
  std::sort(col.begin(), col.end());
  PartitionSpec p;
  p.coord = coord;
  for (std::size_t j = 1; j < cells; ++j) {
    const double c = col[std::min(n - 1, j * n / cells)];
    if (p.cuts.empty() || c > p.cuts.back()) p.cuts.push_back(c);
  }
  if (p.cuts.empty()) throw EnvironmentError("trace is constant; no partition possible");
  return p;
}

double empirical_alpha_partition(std::span<const double> trace, std::size_t k,
                                 const PartitionSpec& partition, std::size_t n) {
  if (k == 0 || partition.coord >= k || trace.size() % k != 0)
    throw EnvironmentError("bad trace layout");
  if (partition.cells() < 2) throw EnvironmentError("partition needs at least 2 cells");
  const std::size_t len = trace.size() / k;
  if (len < 10 * std::max<std::size_t>(n, 1) || len <= n)
    throw EnvironmentError("trace shorter than 10 * lag");
  const std::size_t c = partition.cells();
  std::vector<std::size_t> cell(len);
  for (std::size_t t = 0; t < len; ++t) cell[t] = partition.cell_of(trace[t * k + partition.coord]);
  std::vector<double> joint(c * c, 0.0), a(c, 0.0), b(c, 0.0);
  const std::size_t pairs = len - n;
  for (std::size_t t = 0; t < pairs; ++t) {
    joint[cell[t] * c + cell[t + n]] += 1.0;
    a[cell[t]] += 1.0;
    b[cell[t + n]] += 1.0;
  }
  const double inv = 1.0 / static_cast<double>(pairs);
  double best = 0.0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      best = std::max(best, std::abs(joint[i * c + j] * inv - (a[i] * inv) * (b[j] * inv)));
  return best;
}

SummabilityReport summability(const MixingCurve& curve, double eps, double tail_tol) {
  SummabilityReport rep;
  rep.eps = eps;
  NeumaierSum acc;
  for (std::size_t n = 0; n < curve.size(); ++n) {
    const double term = std::pow(std::max(0.0, curve.values[n]), 1.0 - eps);
    acc.add(term);
    if (!rep.converged_at && n > 0 && term < tail_tol) rep.converged_at = n;
  }
  rep.partial_sum = acc.sum();
  rep.converged = rep.converged_at.has_value();
  return rep;
}

FrozenTrajectory freeze(const DataStream& stream, std::size_t length, std::uint64_t seed) {
  FrozenTrajectory traj;
  traj.m = stream.m();
  traj.M = stream.M();
  traj.data.resize(length * static_cast<std::size_t>(stream.m()));
  auto state = stream.initial_state(seed);
  const auto m = static_cast<std::size_t>(stream.m());
  for (std::size_t t = 0; t < length; ++t)
    stream.advance(state, std::span<double>(traj.data).subspan(t * m, m));
  return traj;
}

FrozenTrajectory shift_trajectory(const FrozenTrajectory& traj, std::size_t m) {
  if (m > traj.length()) throw EnvironmentError("shift beyond the end of the trajectory");
  FrozenTrajectory out;
  out.m = traj.m;
  out.M = traj.M;
  out.data.assign(traj.data.begin() + static_cast<std::ptrdiff_t>(m * traj.m), traj.data.end());
  return out;
}

void write_trajectory(const FrozenTrajectory& traj, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw EnvironmentError("cannot open " + path.string() + " for writing");
  put_u64(os, static_cast<std::uint64_t>(traj.m));
  put_u64(os, std::bit_cast<std::uint64_t>(traj.M));
  put_u64(os, static_cast<std::uint64_t>(traj.length()));
  for (double x : traj.data) put_u64(os, std::bit_cast<std::uint64_t>(x));
  if (!os) throw EnvironmentError("failed writing " + path.string());
}

FrozenTrajectory read_trajectory(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw EnvironmentError("cannot open " + path.string());
  FrozenTrajectory traj;
  const auto m = get_u64(is);
  traj.M = std::bit_cast<double>(get_u64(is));
  const auto len = get_u64(is);
  if (m == 0 || m > (1U << 20)) throw EnvironmentError("corrupt trajectory header");
  traj.m = static_cast<int>(m);
  traj.data.resize(static_cast<std::size_t>(m * len));
  for (auto& x : traj.data) x = std::bit_cast<double>(get_u64(is));
  return traj;
}

}  // namespace lmx
