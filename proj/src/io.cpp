#include "rsfdi/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rsfdi/errors.hpp"

namespace rsfdi {

namespace {

int family_ref(const RieszSpectralSystem& sys, const Json& j) {
  if (j.is_string()) {
    int f = sys.family_index(j.get<std::string>());
    if (f < 0) throw Error(ErrorCode::Validation, "unknown family '" + j.get<std::string>() + "'");
    return f;
  }
  int f = j.get<int>();
  if (f < 0 || f >= static_cast<int>(sys.families.size())) throw Error(ErrorCode::Validation, "family index out of range");
  return f;
}

Eigen::VectorXd vec_from(const Json& j) {
  if (j.is_number()) return Eigen::VectorXd::Constant(1, j.get<double>());
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

Json vec_to(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

EigenRule rule_from(const Json& j) {
  std::string kind = j.value("kind", "poly");
  if (kind == "affine_ksq") return EigenRule::affine_ksq(j.at("a").get<double>(), j.at("b").get<double>());
  if (kind == "log") return EigenRule::logarithmic(j.value("a", 0.0), j.at("b").get<double>());
  if (kind == "poly") {
    EigenRule r = EigenRule::poly(j.at("coeffs").get<std::vector<double>>(),
                                  j.value("imag", std::vector<double>{}));
    r.log_coeff = j.value("log", 0.0);
    return r;
  }
  throw Error(ErrorCode::Validation, "unknown eigenvalue rule kind '" + kind + "'");
}

Json rule_to(const EigenRule& r) {
  Json j;
  j["kind"] = "poly";
  j["coeffs"] = r.re;
  if (r.is_complex()) j["imag"] = r.im;
  if (r.log_coeff != 0.0) j["log"] = r.log_coeff;
  return j;
}

SpectralVector vector_from(const RieszSpectralSystem& sys, const Json& j) {
  SpectralVector v;
  if (j.contains("entries"))
    for (const auto& e : j.at("entries")) {
      int f = family_ref(sys, e.at(0));
      int k = e.at(1).get<int>();
      Eigen::VectorXd c = vec_from(e.at(2));
      if (c.size() != sys.families[f].block_dim(k))
        throw Error(ErrorCode::Validation, "coefficient length does not match the eigenspace at k=" + std::to_string(k));
      v.add(f, k, c);
    }
  if (j.contains("tail")) {
    Json tails = j.at("tail").is_array() ? j.at("tail") : Json::array({j.at("tail")});
    for (const auto& t : tails) {
      if (t.value("form", "c_over_k_pow") != "c_over_k_pow")
        throw Error(ErrorCode::Validation, "only c_over_k_pow tail rules are supported");
      TailTerm term;
      term.family = family_ref(sys, t.at("family"));
      term.c = vec_from(t.at("c"));
      term.p = t.at("p").get<double>();
      term.k0 = t.value("k0", sys.families[term.family].k_min);
      if (!(term.p > 0.5)) throw Error(ErrorCode::Validation, "tail exponent must exceed 1/2 for square summability");
      v.tail.push_back(term);
    }
  }
  return v;
}

Json vector_to(const RieszSpectralSystem& sys, const SpectralVector& v) {
  Json j;
  Json entries = Json::array();
  for (const auto& [key, c] : v.entries) entries.push_back(Json::array({sys.families[key.first].label, key.second, vec_to(c)}));
  j["entries"] = entries;
  if (!v.tail.empty()) {
    Json tails = Json::array();
    for (const auto& t : v.tail)
      tails.push_back(Json{{"family", sys.families[t.family].label},
                           {"form", "c_over_k_pow"},
                           {"c", vec_to(t.c)},
                           {"p", t.p},
                           {"k0", t.k0}});
    j["tail"] = tails;
  }
  return j;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (int j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  const int r = j.at("rows").get<int>(), c = j.at("cols").get<int>();
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int k = 0; k < c; ++k) m(i, k) = j.at("data").at(i).at(k).get<double>();
  return m;
}

RieszSpectralSystem system_from_json(const Json& j) {
  RieszSpectralSystem sys;
  try {
    sys.name = j.value("name", "system");
    for (const auto& fj : j.at("families")) {
      ModeFamily f;
      f.label = fj.at("label").get<std::string>();
      f.rule = rule_from(fj.at("eigenvalue_rule"));
      f.k_min = fj.value("k_min", 1);
      f.count = fj.value("count", 0);
      if (fj.contains("jordan"))
        for (const auto& jd : fj.at("jordan")) f.jordan[jd.at(0).get<int>()] = jd.at(1).get<std::vector<int>>();
      if (fj.contains("gram")) f.gram = matrix_from_json(fj.at("gram"));
      sys.families.push_back(f);
    }
    if (sys.families.empty()) throw Error(ErrorCode::Validation, "system has no mode families");
    for (const auto& v : j.value("B", Json::array())) sys.B.push_back(vector_from(sys, v));
    for (const auto& v : j.at("C")) sys.C.push_back(vector_from(sys, v));
    for (const auto& v : j.value("faults", Json::array())) sys.faults.push_back(vector_from(sys, v));
    for (const auto& o : j.value("orthogonality_facts", Json::array())) {
      int out = o.at("output").get<int>() - 1;
      if (out < 0 || out >= sys.outputs()) throw Error(ErrorCode::Validation, "orthogonality fact output out of range");
      sys.orthogonality.push_back(OrthogonalityFact{out, family_ref(sys, o.at("family"))});
    }
    sys.gap_tail_bound = j.value("gap_tail_bound", -1.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Validation, std::string("malformed system file: ") + e.what());
  }
  return sys;
}

Json system_to_json(const RieszSpectralSystem& sys) {
  Json j;
  j["name"] = sys.name;
  Json fams = Json::array();
  for (const auto& f : sys.families) {
    Json fj{{"label", f.label}, {"eigenvalue_rule", rule_to(f.rule)}, {"k_min", f.k_min}, {"count", f.count}};
    if (!f.jordan.empty()) {
      Json jd = Json::array();
      for (const auto& [k, chains] : f.jordan) jd.push_back(Json::array({k, chains}));
      fj["jordan"] = jd;
    }
    if (f.gram.size() > 0) fj["gram"] = matrix_to_json(f.gram);
    fams.push_back(fj);
  }
  j["families"] = fams;
  auto vecs = [&](const std::vector<SpectralVector>& vs) {
    Json a = Json::array();
    for (const auto& v : vs) a.push_back(vector_to(sys, v));
    return a;
  };
  j["B"] = vecs(sys.B);
  j["C"] = vecs(sys.C);
  j["faults"] = vecs(sys.faults);
  Json facts = Json::array();
  for (const auto& o : sys.orthogonality)
    facts.push_back(Json{{"output", o.output + 1}, {"family", sys.families[o.family].label}});
  j["orthogonality_facts"] = facts;
  if (sys.gap_tail_bound >= 0.0) j["gap_tail_bound"] = sys.gap_tail_bound;
  return j;
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Validation, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path);
}

void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

RieszSpectralSystem load_system(const std::string& path) { return system_from_json(read_json(path)); }

Scenario scenario_from_json(const Json& j) {
  Scenario sc;
  try {
    sc.name = j.value("name", sc.name);
    sc.horizon = j.value("horizon", sc.horizon);
    sc.dt = j.value("dt", sc.dt);
    sc.modes = j.value("modes", sc.modes);
    sc.seed = j.value("seed", sc.seed);
    for (const auto& s : j.value("inputs", Json::array())) sc.inputs.push_back(InputStep{s.at("t").get<double>(), vec_from(s.at("u"))});
    for (const auto& f : j.value("faults", Json::array())) {
      FaultEvent e;
      e.fault = f.at("fault").get<int>() - 1;
      e.onset = f.at("onset").get<double>();
      e.severity = f.at("severity").get<double>();
      std::string prof = f.value("profile", "step");
      if (prof == "ramp")
        e.profile = FaultProfile::Ramp;
      else if (prof != "step")
        throw Error(ErrorCode::Validation, "fault profile must be step or ramp");
      e.ramp_duration = f.value("ramp_duration", 1.0);
      sc.faults.push_back(e);
    }
    sc.process_variance = j.value("process_variance", std::vector<double>{});
    sc.measurement_variance = j.value("measurement_variance", std::vector<double>{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Validation, std::string("malformed scenario: ") + e.what());
  }
  return sc;
}

Json scenario_to_json(const Scenario& sc) {
  Json j{{"name", sc.name}, {"horizon", sc.horizon}, {"dt", sc.dt}, {"modes", sc.modes}, {"seed", sc.seed}};
  Json in = Json::array();
  for (const auto& s : sc.inputs) in.push_back(Json{{"t", s.t}, {"u", vec_to(s.u)}});
  j["inputs"] = in;
  Json fs = Json::array();
  for (const auto& f : sc.faults) {
    Json fj{{"fault", f.fault + 1}, {"onset", f.onset}, {"severity", f.severity},
            {"profile", f.profile == FaultProfile::Ramp ? "ramp" : "step"}};
    if (f.profile == FaultProfile::Ramp) fj["ramp_duration"] = f.ramp_duration;
    fs.push_back(fj);
  }
  j["faults"] = fs;
  j["process_variance"] = sc.process_variance;
  j["measurement_variance"] = sc.measurement_variance;
  return j;
}

Scenario load_scenario(const std::string& path) { return scenario_from_json(read_json(path)); }

Json subspace_to_json(const StructuredSubspace& s) {
  const Truncation& tr = s.truncation();
  Json fams = Json::object();
  for (int f = 0; f < tr.family_count(); ++f) fams[tr.family(f).label] = s.selection(f).describe();
  return Json{{"trunc_order", tr.order()},
              {"families", fams},
              {"finite_part_dim", s.dim_finite_part()},
              {"window_dim", s.window_dim()},
              {"finite_part", matrix_to_json(s.finite_part())}};
}

Json validation_to_json(const ValidationReport& r) {
  Json checks = Json::array();
  for (const auto& c : r.checks) checks.push_back(Json{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  Json rep = Json::array();
  for (const auto& g : r.repeated) {
    Json a = Json::array();
    for (auto [f, k] : g) a.push_back(Json::array({f, k}));
    rep.push_back(a);
  }
  return Json{{"passed", r.passed},
              {"repeated", rep},
              {"repeats_finite", r.repeats_finite},
              {"sup_re", format_double(r.sup_re)},
              {"gap_partial_sum", r.gap_partial_sum},
              {"gap_tail_bound", format_double(r.gap_tail_bound)},
              {"gap_exponent", r.gap_exponent},
              {"gap", to_string(r.gap)},
              {"checks", checks}};
}

Json unobservability_to_json(const UnobservabilityResult& u) {
  const Truncation& tr = u.S_star.truncation();
  Json tails = Json::object();
  for (int f = 0; f < tr.family_count(); ++f) tails[tr.family(f).label] = to_string(u.tails[f]);
  return Json{{"S_star", subspace_to_json(u.S_star)},
              {"S_star_tails", tails},
              {"W_star", subspace_to_json(u.W_star)},
              {"W_phi", subspace_to_json(u.W_phi)},
              {"W_f", subspace_to_json(u.W_f)},
              {"W_phi_f", subspace_to_json(u.W_phi_f)},
              {"N", subspace_to_json(u.N)},
              {"H", matrix_to_json(u.H)},
              {"D_norm", u.D.D.norm()},
              {"D_invariance_residual", u.D.invariance_residual},
              {"D_dc_wphi", u.D.dc_wphi},
              {"D_certified", u.D.certified},
              {"zero_friend_admissible", u.zero_friend_admissible},
              {"ci_iterations", u.ci_iterations},
              {"s_in_ker_hc", u.s_in_ker_hc},
              {"contains_w", u.contains_w}};
}

Json filter_to_json(const DetectionFilter& f, const RieszSpectralSystem& sys) {
  Json tails = Json::array();
  for (int fam : f.Q.tail_families) tails.push_back(Json{{"family", sys.families[fam].label},
                                                             {"index", fam + 1},
                                                             {"rule", rule_to(sys.families[fam].rule)}});
  return Json{{"fault", f.fault + 1},
              {"dim", f.dim()},
              {"strategy", to_string(f.strategy)},
              {"certificate", Json{{"kind", to_string(f.cert.kind)},
                                   {"margin", f.cert.margin},
                                   {"max_re", f.cert.max_re},
                                   {"lyapunov_residual", f.cert.lyapunov_residual},
                                   {"tail_bound", f.cert.tail_bound}}},
              {"tail_families", tails},
              {"tail_sup_re", format_double(f.Q.tail_sup_re)},
              {"mp_residual", f.Q.mp_residual},
              {"decoupling", f.decoupling},
              {"sensitivity", f.sensitivity},
              {"F", matrix_to_json(f.F)},
              {"G", matrix_to_json(f.G)},
              {"E", matrix_to_json(f.E)},
              {"M", matrix_to_json(f.M)},
              {"H", matrix_to_json(f.H)},
              {"D_o", matrix_to_json(f.D_o)},
              {"PL", matrix_to_json(f.PL)}};
}

DetectionFilter filter_from_json(const Json& j) {
  DetectionFilter f;
  try {
    f.fault = j.at("fault").get<int>() - 1;
    f.F = matrix_from_json(j.at("F"));
    f.G = matrix_from_json(j.at("G"));
    f.E = matrix_from_json(j.at("E"));
    f.M = matrix_from_json(j.at("M"));
    f.H = matrix_from_json(j.at("H"));
    f.D_o = matrix_from_json(j.at("D_o"));
    f.PL = matrix_from_json(j.at("PL"));
    f.decoupling = j.value("decoupling", 0.0);
    f.sensitivity = j.value("sensitivity", 0.0);
    f.Q.A_p = f.F - f.D_o * f.M;
    f.Q.M = f.M;
    f.Q.H = f.H;
    std::string ts = j.value("tail_sup_re", std::string("-inf"));
    f.Q.tail_sup_re = ts == "-inf" ? -INFINITY : std::stod(ts);
    f.Q.mp_residual = j.value("mp_residual", 0.0);
    for (const auto& t : j.value("tail_families", Json::array())) f.Q.tail_families.push_back(t.at("index").get<int>() - 1);
    const Json& c = j.at("certificate");
    f.cert.kind = c.value("kind", "EIGENVALUE_MARGIN") == "LYAPUNOV" ? CertificateKind::Lyapunov : CertificateKind::EigenvalueMargin;
    f.cert.margin = c.value("margin", 0.0);
    f.cert.max_re = c.value("max_re", 0.0);
    f.cert.lyapunov_residual = c.value("lyapunov_residual", 0.0);
    f.cert.tail_bound = c.value("tail_bound", 0.0);
    std::string st = j.value("strategy", "CASE1");
    f.strategy = st == "LYAPUNOV" ? ObserverStrategy::Lyapunov : st == "CASE2" ? ObserverStrategy::Case2 : ObserverStrategy::Case1;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Validation, std::string("malformed filter file: ") + e.what());
  }
  return f;
}

Json thresholds_to_json(const ThresholdSet& t) {
  return Json{{"method", t.method}, {"runs", t.runs}, {"threshold", t.threshold}, {"seeds", t.seeds}};
}

ThresholdSet thresholds_from_json(const Json& j) {
  ThresholdSet t;
  t.method = j.value("method", t.method);
  t.runs = j.at("runs").get<int>();
  t.threshold = j.at("threshold").get<std::vector<double>>();
  t.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  return t;
}

Json decisions_to_json(const DecisionTable& d) {
  Json rows = Json::array();
  for (const auto& r : d.rows) {
    Json row{{"filter", r.filter + 1}, {"fault", r.fault + 1}};
    row["detection_time"] = r.time ? Json(*r.time) : Json(nullptr);
    row["delay"] = r.delay ? Json(*r.delay) : Json(nullptr);
    rows.push_back(row);
  }
  Json fired = Json::array();
  for (int i : d.fired) fired.push_back(i + 1);
  return Json{{"rows", rows}, {"fired", fired}};
}

void write_trace_csv(const std::string& path, const SimulationResult& r, const std::vector<double>& thresholds) {
  std::ostringstream os;
  os << "time";
  for (int j = 0; j < r.y.cols(); ++j) os << ",y" << j + 1;
  for (int j = 0; j < r.residual.cols(); ++j) os << ",r" << j + 1;
  for (int j = 0; j < r.residual.cols(); ++j) os << ",flag" << j + 1;
  os << "\n";
  for (std::size_t k = 0; k < r.time.size(); ++k) {
    os << format_double(r.time[k]);
    for (int j = 0; j < r.y.cols(); ++j) os << ',' << format_double(r.y(k, j));
    for (int j = 0; j < r.residual.cols(); ++j) os << ',' << format_double(r.residual(k, j));
    for (int j = 0; j < r.residual.cols(); ++j) {
      bool above = j < static_cast<int>(thresholds.size()) && r.residual(k, j) > thresholds[j];
      os << ',' << (above ? 1 : 0);
    }
    os << "\n";
  }
  write_text(path, os.str());
}

}  // namespace rsfdi
