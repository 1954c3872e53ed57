#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cgmpc/constants.hpp"
#include "cgmpc/governor.hpp"
#include "cgmpc/sim.hpp"

namespace cgmpc {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cfg {

/// Parsed value: a number or a bracketed list ([...] and (...) both nest).
struct Value {
  double num = 0.0;
  bool is_list = false;
  std::vector<Value> items;
};

class Parser {
 public:
  explicit Parser(const std::string& s) : s_(s) {}

  Value parse_value() {
    skip_ws();
    if (pos_ < s_.size() && (s_[pos_] == '[' || s_[pos_] == '(')) {
      char close = s_[pos_] == '[' ? ']' : ')';
      ++pos_;
      Value v;
      v.is_list = true;
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == close) {
        ++pos_;
        return v;
      }
      while (true) {
        v.items.push_back(parse_value());
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ',') {
          ++pos_;
          continue;
        }
        if (pos_ < s_.size() && s_[pos_] == close) {
          ++pos_;
          return v;
        }
        throw ConfigError("expected ',' or closing bracket near position " + std::to_string(pos_));
      }
    }
    return parse_number();
  }

  void expect_end() {
    skip_ws();
    if (pos_ != s_.size()) throw ConfigError("trailing characters in value: '" + s_.substr(pos_) + "'");
  }

 private:
  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }
  Value parse_number() {
    skip_ws();
    size_t start = pos_;
    while (pos_ < s_.size() && std::string("+-0123456789.eE").find(s_[pos_]) != std::string::npos) ++pos_;
    if (start == pos_) throw ConfigError("expected a number near position " + std::to_string(start));
    Value v;
    auto first = s_.data() + start;
    auto last = s_.data() + pos_;
    auto [p, ec] = std::from_chars(first, last, v.num);
    if (ec != std::errc() || p != last)
      throw ConfigError("bad number '" + s_.substr(start, pos_ - start) + "'");
    return v;
  }

  const std::string& s_;
  size_t pos_ = 0;
};

using KvMap = std::map<std::string, Value>;

inline KvMap parse_text(const std::string& text) {
  KvMap kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = line.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string rhs = line.substr(eq + 1);
    if (auto e = rhs.find_last_not_of(" \t\r"); e != std::string::npos) rhs.erase(e + 1);
    Parser p(rhs);
    Value v = p.parse_value();
    p.expect_end();
    if (!kv.emplace(key, std::move(v)).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return kv;
}

inline const Value& require(const KvMap& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("missing key '" + key + "'");
  return it->second;
}

inline double scalar(const Value& v, const std::string& key) {
  if (v.is_list) throw ConfigError("key '" + key + "' must be a scalar");
  return v.num;
}

inline Eigen::VectorXd vector(const Value& v, const std::string& key) {
  if (!v.is_list) throw ConfigError("key '" + key + "' must be a list");
  Eigen::VectorXd out(v.items.size());
  for (size_t i = 0; i < v.items.size(); ++i) {
    if (v.items[i].is_list) throw ConfigError("key '" + key + "' must be a flat list");
    out(i) = v.items[i].num;
  }
  return out;
}

inline Eigen::MatrixXd matrix(const Value& v, const std::string& key) {
  if (!v.is_list || v.items.empty() || !v.items.front().is_list)
    throw ConfigError("key '" + key + "' must be a row-major nested list");
  const size_t rows = v.items.size(), cols = v.items.front().items.size();
  Eigen::MatrixXd out(rows, cols);
  for (size_t r = 0; r < rows; ++r) {
    if (!v.items[r].is_list || v.items[r].items.size() != cols)
      throw ConfigError("key '" + key + "' has ragged rows");
    for (size_t c = 0; c < cols; ++c) out(r, c) = v.items[r].items[c].num;
  }
  return out;
}

}  // namespace cfg

/// Everything a run needs, parsed from the flat dotted-key config format.
struct RunConfig {
  OcpSpec spec;
  ConstantsBundle bundle;
  Eigen::VectorXd x0;
  ReferenceSchedule schedule;
  Eigen::VectorXd v_lo, v_hi;
  long steps = 130;
  std::uint64_t seed = 1;
  long max_iterations = 2000000;
};

/// Lenient mode keeps going past assumption-grade defects (indefinite weights,
/// recursion constants out of range) so `verify` can report them; structural
/// errors still throw.
inline RunConfig parse_config_text(const std::string& text, bool lenient = false) {
  cfg::KvMap kv = cfg::parse_text(text);
  auto sc = [&](const std::string& k) { return cfg::scalar(cfg::require(kv, k), k); };
  auto vec = [&](const std::string& k) { return cfg::vector(cfg::require(kv, k), k); };
  auto mat = [&](const std::string& k) { return cfg::matrix(cfg::require(kv, k), k); };
  auto opt = [&](const std::string& k, double dflt) {
    auto it = kv.find(k);
    return it == kv.end() ? dflt : cfg::scalar(it->second, k);
  };

  PlantModel plant(mat("plant.A"), mat("plant.B"));
  OcpSpec spec{plant,
               static_cast<int>(sc("ocp.N")),
               mat("ocp.Q"),
               mat("ocp.R"),
               Eigen::MatrixXd(),  // P synthesized below
               mat("constraints.C"),
               mat("constraints.D"),
               vec("constraints.x_lower"),
               vec("constraints.x_upper"),
               vec("constraints.u_lower"),
               vec("constraints.u_upper")};
  LqrSolution lqr;
  try {
    lqr = riccati_solve(spec.model, spec.Q, spec.R);
  } catch (const std::exception& e) {
    if (!lenient) throw ConfigError(std::string("Riccati synthesis failed: ") + e.what());
    lqr.P = Eigen::MatrixXd::Identity(spec.nx(), spec.nx());
    lqr.K = Eigen::MatrixXd::Zero(spec.nu(), spec.nx());
  }
  spec.P = lqr.P;
  if (!lenient) {
    try {
      validate(spec);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }

  RunConfig rc{spec, {}, {}, {}, {}, {}, 0, 0, 0};
  ConstantsBundle& b = rc.bundle;
  b.rho = sc("admm.rho");
  b.gamma = sc("admm.gamma");
  rc.max_iterations = static_cast<long>(opt("admm.max_iterations", 2000000));
  b.beta_chi = sc("constants.beta_chi");
  b.beta_w = sc("constants.beta_w");
  b.phi = sc("constants.phi");
  b.pi1 = sc("constants.pi1");
  b.pi2 = sc("constants.pi2");
  b.sigma_bar = sc("constants.sigma_bar");
  b.sigma_lower = sc("constants.sigma_lower");
  b.omega = sc("constants.omega");
  b.lambda_bar = sc("constants.lambda_bar");
  b.budget_decay = sc("constants.budget_decay");
  if (b.rho <= 0.0 || b.gamma <= 0.0 || b.gamma >= 1.0) throw ConfigError("admm.rho/gamma out of range");
  if (!lenient) {
    if (b.beta_chi <= 1.0) throw ConfigError("constants.beta_chi must exceed 1");
    if (b.pi1 <= 0.0 || b.pi1 >= 1.0 || b.pi2 <= 0.0 || b.pi2 >= 1.0)
      throw ConfigError("constants.pi1/pi2 must lie in (0,1)");
  }
  try {
    derived_constants(spec, lqr, b);
  } catch (const std::exception& e) {
    if (!lenient) throw ConfigError(e.what());
    // recompute without the range guards so the report can show the violation
    const double lmin_Q =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(spec.Q).eigenvalues().minCoeff();
    const double sv_B = Eigen::JacobiSVD<Eigen::MatrixXd>(spec.model.B).singularValues().maxCoeff();
    b.alpha1 = 1.0 - std::sqrt(std::max(0.0, 1.0 - lmin_Q / (b.beta_chi * b.beta_chi)));
    b.zeta1 = std::sqrt(sv_B) * b.beta_chi * (b.phi + 1.0);
    b.alpha2 = 1.0 - (b.pi1 + b.pi2 * sv_B * (b.phi + 1.0));
    const double lmin_P =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(lqr.P).eigenvalues().minCoeff();
    const double lmax_P =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(lqr.P).eigenvalues().maxCoeff();
    const double lmin_R =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(spec.R).eigenvalues().minCoeff();
    const Eigen::MatrixXd AmI = spec.model.A - Eigen::MatrixXd::Identity(spec.nx(), spec.nx());
    const double sv_AmI = Eigen::JacobiSVD<Eigen::MatrixXd>(AmI).singularValues().maxCoeff();
    b.zeta2 = b.pi2 * (sv_AmI + sv_B) / std::sqrt(std::max(1e-300, std::min({lmin_Q, lmin_P, lmin_R})));
    b.d = spec.N * lmin_Q / lmax_P + 1.0;
  }
  try {
    b.eps_lower = epsilon_lower(b);
  } catch (const std::exception& e) {
    if (!lenient) throw ConfigError(e.what());
    b.eps_lower = 0.0;
  }
  b.lambda_lower = opt("constants.lambda_lower", 0.0);
  if (b.lambda_lower <= 0.0) b.lambda_lower = b.eps_lower;

  rc.x0 = vec("sim.x0");
  if (rc.x0.size() != spec.nx()) throw ConfigError("sim.x0 dimension mismatch");
  rc.steps = static_cast<long>(sc("sim.steps"));
  if (rc.steps < 1) throw ConfigError("sim.steps must be >= 1");
  rc.seed = static_cast<std::uint64_t>(opt("sim.seed", 1));

  rc.v_lo = vec("reference.v_min");
  rc.v_hi = vec("reference.v_max");
  const cfg::Value& segs = cfg::require(kv, "reference.segments");
  if (!segs.is_list || segs.items.empty()) throw ConfigError("reference.segments must be a nonempty list");
  for (const auto& s : segs.items) {
    if (!s.is_list || s.items.size() < 2) throw ConfigError("reference.segments entries must be (t, v...) tuples");
    long t0 = static_cast<long>(s.items[0].num);
    Eigen::VectorXd v(s.items.size() - 1);
    for (size_t i = 1; i < s.items.size(); ++i) v(i - 1) = s.items[i].num;
    rc.schedule.segments.emplace_back(t0, std::move(v));
  }
  const Eigen::Index nv = rc.schedule.segments.front().second.size();
  if (rc.v_lo.size() != nv || rc.v_hi.size() != nv) throw ConfigError("reference.v_min/v_max dimension mismatch");
  for (const auto& [t0, v] : rc.schedule.segments) {
    (void)t0;
    if (v.size() != nv) throw ConfigError("reference.segments dimension mismatch");
    if (((v - rc.v_lo).array() < 0).any() || ((rc.v_hi - v).array() < 0).any())
      throw ConfigError("reference.segments must lie inside [v_min, v_max]");
  }
  return rc;
}

inline RunConfig parse_config(const std::string& path, bool lenient = false) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str(), lenient);
}

inline Scenario build_scenario(const RunConfig& rc, SimCase which) {
  Scenario sc{rc.spec, rc.bundle, rc.x0, rc.schedule, rc.steps, which, {}, rc.max_iterations, nullptr};
  return sc;
}

}  // namespace cgmpc
