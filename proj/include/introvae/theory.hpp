#pragma once

// Brute-force checks of the equilibrium of the introspective game on finite
// supports. For a discrete game with data distribution p_data, generator
// distribution p_G, per-point energy E and margin m:
//
//   V(G, E) = sum_i p_data(i) E(i) + p_G(i) [m - E(i)]^+   (inference model minimizes)
//   U(G, E) = sum_i p_G(i) E(i)                             (generator minimizes)
//
// (G*, E*) is a saddle point iff V(G*, E*) <= V(G*, E) for all E and
// U(G*, E*) <= U(G, E*) for all G. On a finite support both minima are
// available in closed form: the pointwise best response for E, and a point
// mass on argmin E for G.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "introvae/core_math.hpp"
#include "introvae/errors.hpp"
#include "introvae/rng.hpp"

namespace introvae::theory {

struct PhiProblem {
  double a = 0.0;
  double b = 0.0;
  double m = 1.0;

  void validate() const {
    if (!(a >= 0.0) || !(b >= 0.0)) throw InvalidInput("phi: a and b must be >= 0");
    if (!(m > 0.0)) throw InvalidInput("phi: m must be > 0");
  }
};

// phi(y) = a y + b [m - y]^+
inline double phi(const PhiProblem& p, double y) { return p.a * y + p.b * hinge(p.m, y); }

struct PhiMinimizers {
  std::vector<double> points;  // {m} if a < b, {0} if a > b, {0, m} if a == b
  double value = 0.0;          // minimum of phi on [0, inf)
  double lo = 0.0;             // the full argmin set is the interval [lo, hi]
  double hi = 0.0;             // (hi may be +inf)

  bool contains(double y, double tol = 0.0) const { return y >= lo - tol && y <= hi + tol; }
};

inline PhiMinimizers phi_minimizer(const PhiProblem& p) {
  p.validate();
  constexpr double inf = std::numeric_limits<double>::infinity();
  PhiMinimizers r;
  if (p.a < p.b) {
    r.points = {p.m};
    r.value = p.a * p.m;
    r.lo = p.m;
    r.hi = p.a == 0.0 ? inf : p.m;
  } else if (p.a > p.b) {
    r.points = {0.0};
    r.value = p.b * p.m;
    r.lo = r.hi = 0.0;
  } else {
    r.points = {0.0, p.m};
    r.value = p.a * p.m;
    r.lo = 0.0;
    r.hi = p.a == 0.0 ? inf : p.m;
  }
  return r;
}

struct DiscreteGame {
  std::vector<double> p_data;
  std::vector<double> p_g;
  std::vector<double> energy;
  double margin = 1.0;
};

inline void validate_distribution(const std::vector<double>& p, const char* what, bool strictly_positive) {
  if (p.empty()) throw InvalidInput(std::string(what) + " is empty");
  double sum = 0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidInput(std::string(what) + " has a negative or non-finite entry");
    if (strictly_positive && v == 0.0)
      throw InvalidInput(std::string(what) + " has a zero entry; the data distribution must have full support");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw InvalidInput(std::string(what) + " does not sum to 1");
}

inline void validate(const DiscreteGame& g) {
  validate_distribution(g.p_data, "p_data", true);
  validate_distribution(g.p_g, "p_G", false);
  if (g.p_g.size() != g.p_data.size() || g.energy.size() != g.p_data.size())
    throw ShapeError("game vectors have different support sizes");
  for (double e : g.energy)
    if (!std::isfinite(e) || e < 0.0) throw InvalidInput("energies must be finite and >= 0");
  if (!(g.margin > 0.0)) throw InvalidInput("margin must be > 0");
}

inline double game_value_V(const DiscreteGame& g) {
  validate(g);
  double v = 0;
  for (std::size_t i = 0; i < g.p_data.size(); ++i) v += g.p_data[i] * g.energy[i] + g.p_g[i] * hinge(g.margin, g.energy[i]);
  return v;
}

inline double game_value_U(const DiscreteGame& g) {
  validate(g);
  double u = 0;
  for (std::size_t i = 0; i < g.p_g.size(); ++i) u += g.p_g[i] * g.energy[i];
  return u;
}

// Pointwise minimizer of V(G, .): m where p_data < p_G, 0 elsewhere (ties
// resolved to 0).
inline std::vector<double> best_response_energy(const std::vector<double>& p_data, const std::vector<double>& p_g,
                                                double m) {
  if (p_data.size() != p_g.size()) throw ShapeError("best_response_energy: support sizes differ");
  if (!(m > 0.0)) throw InvalidInput("margin must be > 0");
  std::vector<double> e(p_data.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = p_data[i] < p_g[i] ? m : 0.0;
  return e;
}

struct SaddleReport {
  double value_v = 0.0;
  double value_u = 0.0;
  bool is_saddle = false;
  std::optional<double> gamma_estimate;  // set when the candidate energy is constant
  double max_violation = 0.0;            // largest amount by which any checked condition fails
  bool v_equals_margin = false;
  double min_v_over_perturbations = 0.0;
  bool u_constant_in_generator = false;  // constant energy: U is flat in G
  std::optional<double> generator_deviation_gain;  // U(G*, E*) - U(G0, E*) for the best G0 found
  int trials = 0;
};

inline std::vector<double> random_distribution(Rng& rng, std::size_t n, bool strictly_positive) {
  std::vector<double> p(n);
  for (auto& v : p) {
    v = -std::log(1.0 - rng.uniform());  // Exp(1) -> normalized gives a flat Dirichlet draw
    if (strictly_positive && v < 1e-6) v = 1e-6;
  }
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= s;
  // Absorb rounding so the entries sum to 1 within the validation tolerance.
  double s2 = std::accumulate(p.begin(), p.end(), 0.0);
  *std::max_element(p.begin(), p.end()) += 1.0 - s2;
  return p;
}

// Checks whether (p_G, E) is a saddle point for the given data distribution
// using the exact best responses of both players, and searches for a
// generator deviation G0 (a point mass on argmin E) that lowers U.
inline SaddleReport check_candidate(const DiscreteGame& g, double tolerance) {
  validate(g);
  SaddleReport r;
  r.value_v = game_value_V(g);
  r.value_u = game_value_U(g);
  DiscreteGame best_e = g;
  best_e.energy = best_response_energy(g.p_data, g.p_g, g.margin);
  const double v_best = game_value_V(best_e);
  const double e_min = *std::min_element(g.energy.begin(), g.energy.end());
  const double e_max = *std::max_element(g.energy.begin(), g.energy.end());
  const double v_gap = r.value_v - v_best;   // > 0: the inference model can improve
  const double u_gap = r.value_u - e_min;    // > 0: the generator can improve
  r.max_violation = std::max({0.0, v_gap, u_gap});
  r.is_saddle = v_gap <= tolerance && u_gap <= tolerance;
  r.v_equals_margin = std::abs(r.value_v - g.margin) <= tolerance;
  if (e_max - e_min <= tolerance) {
    r.gamma_estimate = e_min;
    r.u_constant_in_generator = true;
  } else {
    r.generator_deviation_gain = u_gap;
  }
  return r;
}

// Builds the candidate (p_G = p_data, E = gamma) and checks it: exact
// best-response conditions, V = m, V(p_data, E') >= m for random energies E'
// in [0, 2m], and U(G', E*) = gamma for random generators G'.
inline SaddleReport verify_saddle(const std::vector<double>& p_data, double m, double gamma, double tolerance = 1e-9,
                                  int trials = 1000, std::uint64_t seed = 0) {
  validate_distribution(p_data, "p_data", true);
  if (!(m > 0.0)) throw InvalidInput("margin must be > 0");
  if (!(gamma >= 0.0)) throw InvalidInput("gamma must be >= 0");
  DiscreteGame cand{p_data, p_data, std::vector<double>(p_data.size(), gamma), m};
  SaddleReport r = check_candidate(cand, tolerance);
  r.trials = trials;
  Rng rng(seed);
  r.min_v_over_perturbations = std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    DiscreteGame pert = cand;
    for (auto& e : pert.energy) e = rng.uniform(0.0, 2.0 * m);
    const double v = game_value_V(pert);
    r.min_v_over_perturbations = std::min(r.min_v_over_perturbations, v);
    // A perturbation with V below V(G*, E*) would refute the inference-model condition.
    r.max_violation = std::max(r.max_violation, r.value_v - v);
    DiscreteGame alt = cand;
    alt.p_g = random_distribution(rng, p_data.size(), false);
    const double u = game_value_U(alt);
    r.max_violation = std::max(r.max_violation, r.value_u - u);
    if (std::abs(u - gamma) > tolerance) r.u_constant_in_generator = false;
  }
  if (trials > 0 && r.value_v - r.min_v_over_perturbations > tolerance) r.is_saddle = false;
  return r;
}

struct Lemma1FuzzReport {
  int trials = 0;
  int disagreements = 0;
  double max_value_gap = 0.0;  // |grid minimum - closed-form minimum|
};

// Compares phi_minimizer with a brute-force scan of `grid_points` evenly
// spaced points on [0, 3m] for random (a, b, m). Every tenth problem is a
// tie a == b. A disagreement is a grid minimizer outside the closed-form
// argmin set, a grid minimum off the closed-form value, or a reported point
// whose phi misses the minimum.
inline Lemma1FuzzReport lemma1_fuzz(int trials, int grid_points, std::uint64_t seed) {
  if (trials <= 0 || grid_points < 2) throw InvalidInput("lemma1_fuzz: trials and grid size must be positive");
  Rng rng(seed);
  Lemma1FuzzReport r;
  r.trials = trials;
  std::vector<double> vals(static_cast<std::size_t>(grid_points));
  for (int t = 0; t < trials; ++t) {
    PhiProblem p{rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.1, 10.0)};
    if (t % 10 == 9) p.b = p.a;
    const auto sol = phi_minimizer(p);
    const double tol = 1e-9 * (1.0 + std::abs(sol.value));
    const double step = 3.0 * p.m / (grid_points - 1);
    double grid_min = std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid_points; ++i) grid_min = std::min(grid_min, vals[std::size_t(i)] = phi(p, i * step));
    bool ok = std::abs(grid_min - sol.value) <= tol;
    for (int i = 0; i < grid_points && ok; ++i)
      if (vals[std::size_t(i)] <= grid_min + tol && !sol.contains(i * step, step)) ok = false;
    for (double y : sol.points)
      if (std::abs(phi(p, y) - sol.value) > tol) ok = false;
    r.max_value_gap = std::max(r.max_value_gap, std::abs(grid_min - sol.value));
    if (!ok) ++r.disagreements;
  }
  return r;
}

struct GameFuzzReport {
  int games = 0;
  int saddle_failures = 0;        // (p_data, gamma) with gamma in [0, m] not certified as a saddle
  int margin_failures = 0;        // |V - m| above tolerance
  int perturbation_failures = 0;  // some random energy with V < m - tolerance
  int control_failures = 0;       // gamma > m wrongly certified
  int deviation_failures = 0;     // non-constant energy with no improving generator found
  double max_abs_v_minus_m = 0.0;
  double min_perturbed_v_minus_m = std::numeric_limits<double>::infinity();
  std::vector<SaddleReport> sample;  // the first few reports, for display

  int failures() const {
    return saddle_failures + margin_failures + perturbation_failures + control_failures + deviation_failures;
  }
};

// Random games with p_G = p_data and E = gamma in [0, m], each checked with
// `perturbations` random energies, plus two negative controls per game:
// gamma > m and a non-constant energy.
inline GameFuzzReport saddle_fuzz(int games, double m, std::uint64_t seed, double tolerance = 1e-9,
                                  int perturbations = 1000) {
  if (games <= 0) throw InvalidInput("saddle_fuzz: games must be positive");
  if (!(m > 0.0)) throw InvalidInput("margin must be > 0");
  Rng rng(seed);
  GameFuzzReport r;
  r.games = games;
  for (int g = 0; g < games; ++g) {
    const auto n = 2 + static_cast<std::size_t>(rng.below(15));
    const auto p_data = random_distribution(rng, n, true);
    const double gamma = rng.uniform(0.0, m);
    const auto rep = verify_saddle(p_data, m, gamma, tolerance, perturbations, rng.next_u64());
    if (!rep.is_saddle) ++r.saddle_failures;
    if (!rep.v_equals_margin) ++r.margin_failures;
    if (rep.min_v_over_perturbations < m - tolerance) ++r.perturbation_failures;
    r.max_abs_v_minus_m = std::max(r.max_abs_v_minus_m, std::abs(rep.value_v - m));
    r.min_perturbed_v_minus_m = std::min(r.min_perturbed_v_minus_m, rep.min_v_over_perturbations - m);
    if (r.sample.size() < 3) r.sample.push_back(rep);

    const auto above = verify_saddle(p_data, m, m * rng.uniform(1.01, 2.0), tolerance, 0);
    if (above.is_saddle) ++r.control_failures;

    DiscreteGame uneven{p_data, p_data, std::vector<double>(n), m};
    for (auto& e : uneven.energy) e = rng.uniform(0.0, m);
    const auto dev = check_candidate(uneven, tolerance);
    if (dev.is_saddle || !dev.generator_deviation_gain || *dev.generator_deviation_gain <= tolerance)
      ++r.deviation_failures;
  }
  return r;
}

}  // namespace introvae::theory
