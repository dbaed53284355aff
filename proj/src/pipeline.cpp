#include "rsfdi/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "rsfdi/example.hpp"

namespace rsfdi {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kThresholdBaseSeed = 1000;
constexpr double kMarginReq = 0.05;

std::string fault_file(const std::string& dir, const char* stem, int fault) {
  return (fs::path(dir) / (std::string(stem) + "_" + std::to_string(fault + 1) + ".json")).string();
}

fs::path sub(const PipelineConfig& cfg, const char* name) {
  fs::path p = fs::path(cfg.out_dir) / name;
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + p.string() + ": " + ec.message());
  return p;
}

void ensure_out(const PipelineConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + cfg.out_dir + ": " + ec.message());
}

Json require(const fs::path& p, const char* hint) {
  if (!fs::exists(p)) throw Error(ErrorCode::Io, p.string() + " is missing; run " + hint + " first");
  return read_json(p.string());
}

RieszSpectralSystem system_for(const PipelineConfig& cfg) {
  if (!cfg.system_path.empty()) return load_system(cfg.system_path);
  fs::path saved = fs::path(cfg.out_dir) / "analysis" / "system.json";
  if (fs::exists(saved)) return load_system(saved.string());
  return reaction_diffusion_system();
}

Scenario scenario_for(const PipelineConfig& cfg) {
  Scenario sc = cfg.scenario_path.empty() ? example_scenario() : load_scenario(cfg.scenario_path);
  if (cfg.dt) sc.dt = *cfg.dt;
  if (cfg.seed) sc.seed = *cfg.seed;
  return sc;
}

std::vector<int> fault_list(const RieszSpectralSystem& sys, const PipelineConfig& cfg) {
  if (sys.fault_count() == 0) throw Error(ErrorCode::Validation, "system declares no faults");
  if (cfg.fault_index) {
    int f = *cfg.fault_index - 1;
    if (f < 0 || f >= sys.fault_count()) throw Error(ErrorCode::Validation, "--fault-index out of range");
    return {f};
  }
  std::vector<int> all(sys.fault_count());
  for (int i = 0; i < sys.fault_count(); ++i) all[i] = i;
  return all;
}

void require_valid(const RieszSpectralSystem& sys, int modes, ValidationReport& rep) {
  rep = validate_regular_rs(sys, modes);
  if (rep.passed) return;
  std::string failed;
  for (const auto& c : rep.checks)
    if (!c.passed) failed += (failed.empty() ? "" : "; ") + c.name + ": " + c.detail;
  throw Error(ErrorCode::Validation, "system validation failed: " + failed);
}

std::string describe_selection(const Truncation& tr, const StructuredSubspace& s, const std::vector<TailStatus>& tails) {
  std::ostringstream os;
  bool first = true;
  for (int f = 0; f < tr.family_count(); ++f) {
    const IndexSet& sel = s.selection(f);
    if (sel.empty()) continue;
    os << (first ? "" : ", ") << tr.family(f).label << " " << sel.describe();
    if (f < static_cast<int>(tails.size()) && tails[f] == TailStatus::Unverified) os << " (tail unverified)";
    first = false;
  }
  if (s.dim_finite_part() > 0) os << (first ? "" : ", ") << "finite part of dim " << s.dim_finite_part();
  if (first && s.dim_finite_part() == 0) os << "0";
  return os.str();
}

struct AnalysisOutcome {
  std::vector<FaultAnalysis> faults;
  bool unverified = false;
};

AnalysisOutcome write_analysis(const PipelineConfig& cfg, const RieszSpectralSystem& sys, int modes,
                               const std::vector<int>& faults) {
  ValidationReport vr;
  require_valid(sys, modes, vr);
  fs::path dir = sub(cfg, "analysis");
  write_json((dir / "validation.json").string(), validation_to_json(vr));
  write_json((dir / "system.json").string(), system_to_json(sys));

  Model m = make_model(sys, modes);
  AnalysisOutcome out;
  std::string text = "system " + sys.name + ", " + std::to_string(modes) + " modes per family\n";
  text += "gap condition: " + std::string(to_string(vr.gap)) + "\n";
  Json unverified = Json::object();
  for (int f : faults) {
    FaultAnalysis fa = analyze_fault(m, f);
    write_json(fault_file(dir.string(), "fault", f), fa.json);
    text += fa.summary;
    if (!fa.unverified.empty()) {
      out.unverified = true;
      unverified[std::to_string(f + 1)] = fa.unverified;
    }
    out.faults.push_back(std::move(fa));
  }
  write_text((dir / "summary.txt").string(), text);
  Json fl = Json::array();
  for (int f : faults) fl.push_back(f + 1);
  write_json((dir / "manifest.json").string(), Json{{"modes", modes},
                                                     {"faults", fl},
                                                     {"status", out.unverified ? "unverified" : "verified"},
                                                     {"unverified", unverified}});
  return out;
}

void write_filters(const PipelineConfig& cfg, const RieszSpectralSystem& sys, const FilterBank& bank) {
  fs::path dir = sub(cfg, "filters");
  Json fl = Json::array();
  for (const auto& f : bank.filters) {
    write_json(fault_file(dir.string(), "filter", f.fault), filter_to_json(f, sys));
    fl.push_back(f.fault + 1);
  }
  write_json((dir / "manifest.json").string(), Json{{"modes", bank.modes}, {"faults", fl}});
}

FilterBank read_filters(const PipelineConfig& cfg) {
  fs::path dir = fs::path(cfg.out_dir) / "filters";
  Json man = require(dir / "manifest.json", "synthesize");
  FilterBank bank;
  bank.modes = man.at("modes").get<int>();
  for (int f : man.at("faults").get<std::vector<int>>())
    bank.filters.push_back(filter_from_json(read_json(fault_file(dir.string(), "filter", f - 1))));
  return bank;
}

int sim_modes(const PipelineConfig& cfg, const FilterBank& bank, Scenario& sc, bool scenario_given) {
  if (cfg.modes && *cfg.modes != bank.modes)
    throw Error(ErrorCode::IncompatibleTruncation, "--modes " + std::to_string(*cfg.modes) +
                                                       " differs from the filters' " + std::to_string(bank.modes));
  if (scenario_given && sc.modes != bank.modes)
    throw Error(ErrorCode::IncompatibleTruncation, "scenario asks for " + std::to_string(sc.modes) +
                                                       " modes, filters were built with " + std::to_string(bank.modes));
  sc.modes = bank.modes;
  return bank.modes;
}

Json max_json(const Eigen::MatrixXd& r, const std::vector<double>& time, double from) {
  Json a = Json::array();
  for (int j = 0; j < r.cols(); ++j) {
    double mx = 0.0;
    for (std::size_t k = 0; k < time.size(); ++k)
      if (time[k] >= from) mx = std::max(mx, r(k, j));
    a.push_back(mx);
  }
  return a;
}

ThresholdSet write_thresholds(const PipelineConfig& cfg, const Model& m, const FilterBank& bank, const Scenario& sc,
                              std::uint64_t base) {
  if (cfg.runs < 1) throw Error(ErrorCode::Validation, "--runs must be at least 1");
  ThresholdSet t = monte_carlo_thresholds(m, bank.filters, sc.healthy(), cfg.runs, base, std::max(1, cfg.jobs));
  Json j = thresholds_to_json(t);
  j["base_seed"] = base;
  j["modes"] = bank.modes;
  j["dt"] = sc.dt;
  j["horizon"] = sc.horizon;
  Json fl = Json::array();
  for (const auto& f : bank.filters) fl.push_back(f.fault + 1);
  j["filters"] = fl;
  ensure_out(cfg);
  write_json((fs::path(cfg.out_dir) / "thresholds.json").string(), j);
  return t;
}

Json run_scenario(const PipelineConfig& cfg, const Model& m, const FilterBank& bank, const Scenario& sc,
                  const ThresholdSet* th, const std::string& trace_name) {
  SimulationResult r = simulate(m, bank.filters, sc);
  fs::path dir = sub(cfg, "traces");
  std::vector<double> thr = th ? th->threshold : std::vector<double>{};
  write_trace_csv((dir / (trace_name + ".csv")).string(), r, thr);
  Json j{{"scenario", scenario_to_json(sc)}, {"trace", "traces/" + trace_name + ".csv"}, {"seed", r.seed}};
  j["max_residual"] = max_json(r.residual, r.time, 0.0);
  if (th) {
    j["thresholds"] = th->threshold;
    j["decisions"] = decisions_to_json(detect(r, th->threshold, bank.filters, sc, cfg.n_persist));
  }
  return j;
}

Json delay_row(const Json& decisions, int fault) {
  for (const auto& row : decisions.at("rows"))
    if (row.at("filter").get<int>() == fault + 1) return row.at("delay");
  return nullptr;
}

}  // namespace

Scenario example_scenario() {
  Scenario sc;
  sc.name = "example";
  sc.horizon = 10.0;
  sc.dt = 1e-3;
  sc.modes = kDefaultSimulationModes;
  sc.faults = {FaultEvent{0, 5.0, 2.0}, FaultEvent{1, 7.0, -1.0}};
  sc.process_variance = {0.5};
  sc.measurement_variance = {0.2};
  sc.seed = 1;
  return sc;
}

std::vector<std::pair<double, double>> example_severity_rows() {
  return {{2.0, -1.0}, {0.5, 0.5}, {0.09, 0.2}, {0.05, 0.15}};
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::Validation:
    case ErrorCode::Reject:
    case ErrorCode::UnboundedTail:
    case ErrorCode::SpectrumHit:
    case ErrorCode::IncompatibleTruncation:
      return 2;
    case ErrorCode::UnverifiedTail:
      return 3;
    case ErrorCode::Io:
      return 5;
    default:
      return 4;
  }
}

Json error_to_json(const std::string& stage, const Error& e) {
  return Json{{"stage", stage}, {"error", to_string(e.code())}, {"message", e.what()}, {"exit_code", exit_code(e.code())}};
}

FaultAnalysis analyze_fault(const Model& m, int fault) {
  const Truncation& tr = *m.tr;
  FaultAnalysis fa;
  fa.fault = fault;
  fa.report = check_fdi_necessary(m, fault);
  const UnobservabilityResult& U = fa.report.U;
  for (int f : U.unverified) fa.unverified.push_back(tr.family(f).label);

  Json verdicts;
  verdicts["necessary"] = Json{{"status", fa.report.necessary_ok ? "OK" : "FAIL"},
                               {"intersection_dim", fa.report.intersection_dim}};
  Json quotient;
  std::string case1 = "N/A";
  std::string line_case;
  try {
    QuotientSystem qs = quotient_system(m, U);
    double max_re = -INFINITY;
    if (qs.dim() > 0) {
      Eigen::VectorXcd ev = Eigen::EigenSolver<Eigen::MatrixXd>(qs.A_p, false).eigenvalues();
      for (int i = 0; i < ev.size(); ++i) max_re = std::max(max_re, ev(i).real());
    }
    double worst = std::max(max_re, qs.tail_sup_re);
    Json tf = Json::array();
    for (int f : qs.tail_families) tf.push_back(tr.family(f).label);
    quotient = Json{{"dim", qs.dim()},
                    {"max_re_window", format_double(max_re)},
                    {"tail_families", tf},
                    {"tail_sup_re", format_double(qs.tail_sup_re)},
                    {"mp_residual", qs.mp_residual}};
    bool ok1 = worst <= -kMarginReq;
    case1 = ok1 ? "OK" : "FAIL";
    verdicts["case1"] = Json{{"status", case1}, {"margin", format_double(-worst)}};
    std::ostringstream c1;
    c1 << "Case 1 " << case1 << " (all quotient eigenvalues <= " << std::setprecision(10) << worst << ")";
    line_case = c1.str();

    if (!qs.finite()) {
      verdicts["case2"] = Json{{"status", "N/A"}, {"detail", "quotient continues past the window"}};
    } else {
      try {
        ObserverGain g = observer_gain(qs, ObserverOptions{ObserverStrategy::Case2, kMarginReq, {}, {}});
        verdicts["case2"] = Json{{"status", "OK"}, {"margin", g.cert.margin}, {"placed", g.unstable_dim}};
      } catch (const Error& e) {
        verdicts["case2"] = Json{{"status", "FAIL"}, {"error", to_string(e.code())}, {"detail", e.what()}};
      }
    }
    try {
      ObserverGain g = observer_gain(qs);
      ObserverOptions lo{ObserverStrategy::Lyapunov, kMarginReq, {}, g.D_o};
      ObserverGain lg = observer_gain(qs, lo);
      verdicts["lyapunov"] = Json{{"status", "OK"},
                                  {"residual", lg.cert.lyapunov_residual},
                                  {"tail_bound", lg.cert.tail_bound}};
    } catch (const Error& e) {
      verdicts["lyapunov"] = Json{{"status", "FAIL"}, {"error", to_string(e.code())}, {"detail", e.what()}};
    }
  } catch (const Error& e) {
    quotient = Json{{"error", to_string(e.code())}, {"detail", e.what()}};
    line_case = std::string("quotient failed: ") + e.what();
  }

  fa.json = Json{{"fault", fault + 1}, {"modes", tr.order()}};
  fa.json["unobservability"] = unobservability_to_json(U);
  fa.json["quotient"] = quotient;
  fa.json["verdicts"] = verdicts;
  Json uv = Json::array();
  for (const auto& s : fa.unverified) uv.push_back(s);
  fa.json["unverified_tails"] = uv;

  std::ostringstream os;
  os << "fault " << fault + 1 << ": S* = " << describe_selection(tr, U.S_star, U.tails) << "; ";
  os << "necessary condition " << (fa.report.necessary_ok ? "OK" : "FAIL") << "; " << line_case << "\n";
  os << "  W* dim " << U.W_star.window_dim() << ", |D| = " << format_double(U.D.D.norm())
     << (U.D.certified ? " (certified)" : " (NOT certified)") << ", H rows " << U.H.rows() << ": [";
  for (int i = 0; i < U.H.rows(); ++i) {
    os << (i ? "; " : "");
    for (int j = 0; j < U.H.cols(); ++j) os << (j ? ", " : "") << format_double(U.H(i, j));
  }
  os << "]\n";
  fa.summary = os.str();
  return fa;
}

FilterBank synthesize_filters(const RieszSpectralSystem& sys, int modes, const std::vector<int>& faults) {
  Model m = make_model(sys, modes);
  FilterBank bank;
  bank.modes = modes;
  for (int f : faults) {
    bank.designs.push_back(design_filter(m, f));
    bank.filters.push_back(bank.designs.back().filter);
  }
  return bank;
}

int cmd_analyze(const PipelineConfig& cfg) {
  RieszSpectralSystem sys = cfg.system_path.empty() ? reaction_diffusion_system() : load_system(cfg.system_path);
  int modes = cfg.modes.value_or(kDefaultAnalysisModes);
  AnalysisOutcome out = write_analysis(cfg, sys, modes, fault_list(sys, cfg));
  for (const auto& fa : out.faults) std::cout << fa.summary;
  if (out.unverified && !cfg.allow_unverified)
    throw Error(ErrorCode::UnverifiedTail, "S* has tails that could not be decided; rerun with --allow-unverified");
  return 0;
}

int cmd_synthesize(const PipelineConfig& cfg) {
  Json man = require(fs::path(cfg.out_dir) / "analysis" / "manifest.json", "analyze");
  if (man.value("status", "verified") != "verified" && !cfg.allow_unverified)
    throw Error(ErrorCode::UnverifiedTail, "analysis left unverified tails; rerun with --allow-unverified");
  RieszSpectralSystem sys = system_for(cfg);
  std::vector<int> faults;
  for (int f : man.at("faults").get<std::vector<int>>())
    if (!cfg.fault_index || *cfg.fault_index == f) faults.push_back(f - 1);
  if (faults.empty()) throw Error(ErrorCode::Validation, "--fault-index was not analyzed");
  int modes = cfg.modes.value_or(cfg.scenario_path.empty() ? kDefaultSimulationModes : load_scenario(cfg.scenario_path).modes);
  FilterBank bank = synthesize_filters(sys, modes, faults);
  write_filters(cfg, sys, bank);
  for (const auto& f : bank.filters)
    std::cout << "filter " << f.fault + 1 << ": dim " << f.dim() << ", margin " << format_double(f.cert.margin)
              << ", decoupling " << format_double(f.decoupling) << "\n";
  return 0;
}

int cmd_simulate(const PipelineConfig& cfg) {
  FilterBank bank = read_filters(cfg);
  RieszSpectralSystem sys = system_for(cfg);
  Scenario sc = scenario_for(cfg);
  Model m = make_model(sys, sim_modes(cfg, bank, sc, !cfg.scenario_path.empty()));
  sc.validate(sys.fault_count());
  std::optional<ThresholdSet> th;
  fs::path tp = fs::path(cfg.out_dir) / "thresholds.json";
  if (fs::exists(tp)) th = thresholds_from_json(read_json(tp.string()));
  Json j = run_scenario(cfg, m, bank, sc, th ? &*th : nullptr, sc.name);
  write_json((fs::path(cfg.out_dir) / "traces" / (sc.name + ".json")).string(), j);
  std::cout << "trace written to " << (fs::path(cfg.out_dir) / "traces" / (sc.name + ".csv")).string() << "\n";
  return 0;
}

int cmd_thresholds(const PipelineConfig& cfg) {
  FilterBank bank = read_filters(cfg);
  RieszSpectralSystem sys = system_for(cfg);
  Scenario sc = scenario_for(cfg);
  Model m = make_model(sys, sim_modes(cfg, bank, sc, !cfg.scenario_path.empty()));
  sc.validate(sys.fault_count());
  ThresholdSet t = write_thresholds(cfg, m, bank, sc, cfg.seed.value_or(kThresholdBaseSeed));
  for (std::size_t i = 0; i < t.threshold.size(); ++i)
    std::cout << "th" << bank.filters[i].fault + 1 << " = " << format_double(t.threshold[i]) << "\n";
  return 0;
}

int cmd_reproduce_example(const PipelineConfig& cfg) {
  RieszSpectralSystem sys = reaction_diffusion_system();
  std::vector<int> faults{0, 1};
  AnalysisOutcome an = write_analysis(cfg, sys, kDefaultAnalysisModes, faults);

  Scenario sc = example_scenario();
  if (cfg.dt) sc.dt = *cfg.dt;
  if (cfg.modes) sc.modes = *cfg.modes;
  FilterBank bank = synthesize_filters(sys, sc.modes, faults);
  write_filters(cfg, sys, bank);
  Model m = make_model(sys, sc.modes);

  std::uint64_t base = cfg.seed.value_or(kThresholdBaseSeed);
  ThresholdSet th = write_thresholds(cfg, m, bank, sc, base);
  Json nominal = run_scenario(cfg, m, bank, sc, &th, "scenario");

  Json rows = Json::array();
  const auto sev = example_severity_rows();
  for (std::size_t i = 0; i < sev.size(); ++i) {
    Scenario row = sc;
    row.name = "severity_row_" + std::to_string(i + 1);
    row.faults[0].severity = sev[i].first;
    row.faults[1].severity = sev[i].second;
    Json r = run_scenario(cfg, m, bank, row, &th, row.name);
    rows.push_back(Json{{"severity_f1", sev[i].first},
                        {"severity_f2", sev[i].second},
                        {"delay_f1", delay_row(r.at("decisions"), 0)},
                        {"delay_f2", delay_row(r.at("decisions"), 1)},
                        {"fired", r.at("decisions").at("fired")},
                        {"trace", r.at("trace")}});
  }

  Json summary;
  summary["system"] = sys.name;
  Json analysis = Json::array();
  for (const auto& fa : an.faults)
    analysis.push_back(Json{{"fault", fa.fault + 1},
                            {"necessary", fa.json.at("verdicts").at("necessary").at("status")},
                            {"case1", fa.json.at("verdicts").value("case1", Json{{"status", "N/A"}})},
                            {"unverified_tails", fa.json.at("unverified_tails")},
                            {"H", matrix_to_json(fa.report.U.H)}});
  summary["analysis"] = analysis;
  Json filters = Json::array();
  for (const auto& f : bank.filters)
    filters.push_back(Json{{"fault", f.fault + 1}, {"dim", f.dim()}, {"margin", f.cert.margin}, {"decoupling", f.decoupling}});
  summary["filters"] = filters;
  summary["modes"] = sc.modes;
  summary["dt"] = sc.dt;
  summary["n_persist"] = cfg.n_persist;
  summary["thresholds"] = Json{{"values", th.threshold}, {"runs", th.runs}, {"base_seed", base}};
  summary["scenario"] = nominal;
  summary["delay_table"] = rows;

  if (cfg.convergence_report) {
    Scenario quiet = sc;
    quiet.process_variance = {0.0};
    quiet.measurement_variance = {0.0};
    SimulationResult a = simulate(m, bank.filters, quiet);
    FilterBank fine = synthesize_filters(sys, 2 * sc.modes, faults);
    Model m2 = make_model(sys, 2 * sc.modes);
    quiet.modes = 2 * sc.modes;
    SimulationResult b = simulate(m2, fine.filters, quiet);
    summary["convergence"] = Json{{"modes", Json::array({sc.modes, 2 * sc.modes})},
                                  {"max_residual_deviation", (a.residual - b.residual).cwiseAbs().maxCoeff()}};
  }
  write_json((fs::path(cfg.out_dir) / "summary.json").string(), summary);

  std::cout << "thresholds:";
  for (double t : th.threshold) std::cout << " " << format_double(t);
  std::cout << "\nseverity (f1, f2) | delay f1 | delay f2\n";
  for (const auto& r : rows) {
    auto show = [](const Json& v) { return v.is_null() ? std::string("none") : format_double(v.get<double>()); };
    std::cout << format_double(r["severity_f1"].get<double>()) << ", " << format_double(r["severity_f2"].get<double>())
              << " | " << show(r["delay_f1"]) << " | " << show(r["delay_f2"]) << "\n";
  }
  if (an.unverified) std::cout << "note: S* tails left unverified, see analysis/manifest.json\n";
  return 0;
}

int cmd_export_example(const PipelineConfig& cfg) {
  ensure_out(cfg);
  write_json((fs::path(cfg.out_dir) / "reaction_diffusion.json").string(), system_to_json(reaction_diffusion_system()));
  write_json((fs::path(cfg.out_dir) / "example_scenario.json").string(), scenario_to_json(example_scenario()));
  Scenario quiet = example_scenario();
  quiet.name = "noiseless";
  quiet.process_variance = {0.0};
  quiet.measurement_variance = {0.0};
  write_json((fs::path(cfg.out_dir) / "noiseless_scenario.json").string(), scenario_to_json(quiet));
  return 0;
}

int run_command(const std::string& name, const PipelineConfig& cfg) {
  try {
    if (name == "analyze") return cmd_analyze(cfg);
    if (name == "synthesize") return cmd_synthesize(cfg);
    if (name == "simulate") return cmd_simulate(cfg);
    if (name == "thresholds") return cmd_thresholds(cfg);
    if (name == "reproduce-example") return cmd_reproduce_example(cfg);
    if (name == "export-example") return cmd_export_example(cfg);
    throw Error(ErrorCode::Validation, "unknown command " + name);
  } catch (const Error& e) {
    Json j = error_to_json(name, e);
    std::cerr << name << ": " << to_string(e.code()) << ": " << e.what() << "\n";
    try {
      ensure_out(cfg);
      write_json((fs::path(cfg.out_dir) / "error.json").string(), j);
    } catch (const Error&) {
    }
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << name << ": " << e.what() << "\n";
    return 5;
  }
}

}  // namespace rsfdi
