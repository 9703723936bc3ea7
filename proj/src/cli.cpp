#include "cml/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "cml/analytic.hpp"
#include "cml/batch.hpp"
#include "cml/constructions.hpp"
#include "cml/error.hpp"
#include "cml/market.hpp"
#include "cml/pde.hpp"
#include "cml/stats.hpp"
#include "cml/wf.hpp"

extern char** environ;

namespace cml {

namespace {

std::string trim_copy(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << text;
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

void emit(const nlohmann::ordered_json& doc, const std::string& path, std::ostream& out) {
    const std::string text = doc.dump(2) + "\n";
    if (path.empty()) out << text;
    else write_text(path, text);
}

nlohmann::ordered_json summary_pair(const std::vector<int>& nb, const std::vector<int>& dab, const ThresholdPair& pair) {
    const EstimateSummary s_nb = summarize(std::span<const int>(nb));
    const EstimateSummary s_dab = summarize(std::span<const int>(dab));
    return to_json(bounds_report(pair, s_nb, s_dab));
}

nlohmann::ordered_json wf_document(const SimulateSettings& s) {
    WfRunParams p;
    p.k = s.k;
    p.h = s.h;
    p.seed = s.seed;
    p.runs = s.runs;
    p.max_time = s.max_time;
    p.bridge_correction = !s.no_bridge;
    p.monitors = ThresholdPair(s.a, s.b);
    const auto outcomes = wf_batch(p, s.serial ? Execution::serial : Execution::parallel, s.workers);
    std::vector<int> nb, dab;
    std::uint64_t truncated = 0;
    std::vector<std::uint64_t> wins(static_cast<std::size_t>(p.k), 0);
    for (const auto& o : outcomes) {
        if (o.truncated) {
            ++truncated;
            continue;
        }
        nb.push_back(o.n_b);
        dab.push_back(o.d_ab);
        ++wins[static_cast<std::size_t>(o.winner)];
    }
    if (nb.empty()) throw RunawayError("every wf path reached max_time");
    nlohmann::ordered_json doc;
    doc["command"] = "simulate";
    doc["program"] = "wf";
    doc["a"] = s.a;
    doc["b"] = s.b;
    doc["runs"] = s.runs;
    doc["seed"] = s.seed;
    doc["parameters"] = {{"k", s.k}, {"h", s.h}, {"max_time", s.max_time}, {"bridge_correction", !s.no_bridge}};
    doc["completed"] = nb.size();
    doc["truncated"] = truncated;
    doc["report"] = summary_pair(nb, dab, p.monitors);
    doc["winner_counts"] = wins;
    return doc;
}

std::vector<std::string> split_args(int argc, const char* const* argv) {
    std::vector<std::string> v;
    for (int i = 1; i < argc; ++i) v.emplace_back(argv[i]);
    return v;
}

// key=value lines; '#' comments and blank lines ignored.
std::vector<std::pair<std::string, std::string>> read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config '" + path + "'");
    std::vector<std::pair<std::string, std::string>> kv;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim_copy(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InputError("config: expected key=value", n);
        std::string key = trim_copy(line.substr(0, eq));
        while (!key.empty() && key.front() == '-') key.erase(key.begin());
        if (key.empty()) throw InputError("config: empty key", n);
        kv.emplace_back(key, trim_copy(line.substr(eq + 1)));
    }
    return kv;
}

std::string env_key_to_flag(std::string key) {
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) {
        return c == '_' ? '-' : static_cast<char>(std::tolower(c));
    });
    return key;
}

} // namespace

std::vector<double> read_probability_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "': file not found or unreadable");
    std::vector<double> p;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) {
            char* end = nullptr;
            const double v = std::strtod(tok.c_str(), &end);
            if (end != tok.c_str() + tok.size()) throw InputError("'" + tok + "' is not a probability", n);
            p.push_back(v);
        }
    }
    if (p.empty()) throw InputError("'" + path + "' holds no probabilities");
    return p;
}

nlohmann::ordered_json simulate_document(const SimulateSettings& s) {
    if (s.runs < 2) throw PreconditionError("runs must be at least 2");
    if (s.program == "wf") return wf_document(s);

    const ThresholdPair pair(s.a, s.b);
    const ProgramKind kind = parse_program_kind(s.program);
    ConstructionProgram prog;
    nlohmann::ordered_json params;
    std::vector<double> p;
    if (!s.p_file.empty()) p = read_probability_file(s.p_file);
    switch (kind) {
    case ProgramKind::survivor: {
        const int n0 = s.n0 > 0 ? s.n0 : 100;
        prog = p.empty() ? survivor_program(n0, pair) : survivor_program(p, pair);
        if (p.empty()) params["n0"] = n0;
        break;
    }
    case ProgramKind::survivor_zero_prefix:
        prog = survivor_zero_prefix_program(s.m0, pair);
        params["M0"] = s.m0;
        break;
    case ProgramKind::sequential:
        prog = sequential_program(s.b0, pair);
        params["b0"] = s.b0;
        params["atoms"] = prog.initial.size();
        break;
    case ProgramKind::small_spread:
        if (p.empty()) {
            const int n0 = s.n0 > 0 ? s.n0 : 40;
            p.assign(static_cast<std::size_t>(n0), 1.0 / n0);
            params["n0"] = n0;
        }
        prog = small_spread_program(p, pair);
        break;
    case ProgramKind::embed_prefix:
        if (p.empty()) p = {0.6, 0.4};
        prog = embed_prefix_program(p, s.depth, pair);
        params["depth"] = s.depth;
        break;
    }
    if (!s.p_file.empty()) params["p"] = p;

    BatchOptions opts;
    opts.runs = s.runs;
    opts.seed = s.seed;
    opts.workers = s.workers;
    opts.execution = s.serial ? Execution::serial : Execution::parallel;
    std::ofstream trace_file;
    std::optional<TraceWriter> trace;
    if (!s.trace_path.empty()) {
        trace_file.open(s.trace_path);
        if (!trace_file) throw InputError("cannot write trace '" + s.trace_path + "'");
        trace.emplace(trace_file);
        opts.engine.trace = &*trace;
    }
    const auto outcomes = run_batch(prog, opts);

    std::vector<int> nb, dab;
    nb.reserve(outcomes.size());
    dab.reserve(outcomes.size());
    for (const auto& o : outcomes) {
        nb.push_back(o.n_b);
        dab.push_back(o.d_ab);
    }
    nlohmann::ordered_json doc;
    doc["command"] = "simulate";
    doc["program"] = std::string(to_string(kind));
    doc["a"] = s.a;
    doc["b"] = s.b;
    doc["runs"] = s.runs;
    doc["seed"] = s.seed;
    doc["parameters"] = params;
    doc["report"] = summary_pair(nb, dab, pair);

    if (kind == ProgramKind::sequential) {
        const Histogram h_nb = histogram_of(nb);
        Histogram h_shift;
        for (const auto& [v, c] : histogram_of(dab)) h_shift[v + 1] = c;
        doc["gof"] = {{"N_b", to_json(gof_geometric(h_nb, s.b, 1))},
                      {"D_ab_plus_1", to_json(gof_geometric(h_shift, (s.b - s.a) / (1.0 - s.a), 1))}};
    }
    if (kind == ProgramKind::small_spread) {
        int lo = std::numeric_limits<int>::max(), hi = 0, above = 0, inside = 0;
        for (const auto& o : outcomes) {
            lo = std::min(lo, o.machine->downcrossings);
            hi = std::max(hi, o.machine->downcrossings);
            above = std::max(above, o.machine->above_b);
            inside = std::max(inside, o.machine->in_zero_b);
        }
        doc["machine"] = {{"downcrossings_min", lo},
                          {"downcrossings_max", hi},
                          {"max_above_b", above},
                          {"max_in_zero_b", inside},
                          {"k_alpha", k_alpha(pair.alpha())}};
    }
    if (kind == ProgramKind::embed_prefix) {
        std::uint64_t ok = 0;
        for (const auto& o : outcomes) ok += o.chain_ok.value_or(false) ? 1 : 0;
        doc["refinement_matched"] = ok;
    }
    return doc;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    return run_cli(split_args(argc, argv), out, err);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"cml: crossing statistics of feasible martingale systems", "cml"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.set_help_flag("--help", "print this help and exit");

    std::string config_path;
    std::string out_path;
    std::string hist_path;

    SimulateSettings sim;
    auto* simulate = app.add_subcommand("simulate", "sample a construction program or the WF diffusion");
    auto add_common = [&](CLI::App* sc) {
        sc->add_option("--config", config_path, "key=value file with option defaults");
        sc->add_option("--out", out_path, "output path (default: stdout)");
    };
    auto add_sim = [&](CLI::App* sc) {
        sc->add_option("--a", sim.a, "lower level");
        sc->add_option("--b", sim.b, "upper level");
        sc->add_option("--runs", sim.runs, "number of runs");
        sc->add_option("--seed", sim.seed, "master seed");
        sc->add_option("--workers", sim.workers, "threads (0: all)");
        sc->add_flag("--serial", sim.serial, "run on one thread");
        sc->add_option("--hist", hist_path, "write N_b and D_ab histograms as CSV");
        sc->add_option("--k", sim.k, "wf: number of alleles");
        sc->add_option("--h", sim.h, "wf: time step");
        sc->add_option("--max-time", sim.max_time, "wf: time cap per path");
        sc->add_flag("--no-bridge", sim.no_bridge, "wf: disable the bridge correction");
        add_common(sc);
    };
    simulate->add_option("--program", sim.program, "survivor|survivor0|sequential|smallspread|embed|wf")->required();
    simulate->add_option("--b0", sim.b0, "sequential: profile parameter");
    simulate->add_option("--n0", sim.n0, "survivor/smallspread: number of equal atoms");
    simulate->add_option("--M0,--m0", sim.m0, "survivor0: starting atom count");
    simulate->add_option("--p-file", sim.p_file, "initial distribution file");
    simulate->add_option("--depth", sim.depth, "embed: refinement depth");
    simulate->add_option("--trace", sim.trace_path, "CSV event trace (forces serial execution)");
    add_sim(simulate);

    auto* wf = app.add_subcommand("wf", "Wright-Fisher diffusion runs or the cov3 estimate");
    bool cov3 = false;
    double cx = 0.2, cy = 0.2;
    wf->add_flag("--cov3", cov3, "estimate P(both of the first two alleles reach b)");
    wf->add_option("--x", cx, "cov3: first allele start");
    wf->add_option("--y", cy, "cov3: second allele start");
    add_sim(wf);

    auto* pde = app.add_subcommand("pde", "solve the joint hitting-probability PDE");
    double pde_b = 0.5, pde_tol = 1e-10;
    int pde_m = 255;
    std::string grid_path;
    pde->add_option("--b", pde_b, "level");
    pde->add_option("--m", pde_m, "interior nodes per axis");
    pde->add_option("--tol", pde_tol, "relative residual");
    pde->add_option("--grid", grid_path, "write the grid CSV (x,y,f)");
    add_common(pde);

    auto* bnd = app.add_subcommand("bounds", "print the closed-form means and variance caps");
    double ba = 0.1, bb = 0.25;
    bnd->add_option("--a", ba, "lower level");
    bnd->add_option("--b", bb, "upper level");
    add_common(bnd);

    auto* analyze = app.add_subcommand("analyze", "crossing counts of a probability time series CSV");
    std::string csv_path, interp = "linear";
    double aa = 0.1, ab = 0.25;
    analyze->add_option("--csv", csv_path, "CSV with header time,contestant,prob")->required();
    analyze->add_option("--a", aa, "lower level");
    analyze->add_option("--b", ab, "upper level");
    analyze->add_option("--interp", interp, "linear|step");
    add_common(analyze);

    auto* report = app.add_subcommand("report", "merge JSON outputs into one document");
    std::vector<std::string> inputs;
    report->add_option("inputs", inputs, "JSON files")->required();
    add_common(report);

    if (args.empty()) {
        err << app.help();
        return kExitInvalid;
    }

    try {
        // Assemble config and environment values in front of the command
        // line so that later occurrences win.
        std::vector<std::string> full;
        std::size_t first = 0;
        while (first < args.size() && args[first].rfind("-", 0) == 0) full.push_back(args[first++]);
        CLI::App* chosen = nullptr;
        if (first < args.size()) {
            for (auto* sc : app.get_subcommands({})) {
                if (sc->get_name() == args[first]) chosen = sc;
            }
        }
        if (chosen) {
            full.push_back(args[first]);
            std::string cfg;
            for (std::size_t i = first + 1; i < args.size(); ++i) {
                if (args[i] == "--config" && i + 1 < args.size()) cfg = args[i + 1];
                else if (args[i].rfind("--config=", 0) == 0) cfg = args[i].substr(9);
            }
            if (!cfg.empty()) {
                for (const auto& [key, value] : read_config(cfg)) {
                    if (key == "config" || !chosen->get_option_no_throw("--" + key)) {
                        throw InputError("config: unknown key '" + key + "' for " + chosen->get_name());
                    }
                    full.push_back("--" + key + "=" + value);
                }
            }
            std::vector<std::string> env_args;
            for (char** e = environ; e && *e; ++e) {
                const std::string entry(*e);
                if (entry.rfind("CML_", 0) != 0) continue;
                const auto eq = entry.find('=');
                if (eq == std::string::npos) continue;
                const std::string flag = "--" + env_key_to_flag(entry.substr(4, eq - 4));
                if (flag == "--config" || !chosen->get_option_no_throw(flag)) continue;
                env_args.push_back(flag + "=" + entry.substr(eq + 1));
            }
            std::sort(env_args.begin(), env_args.end());
            full.insert(full.end(), env_args.begin(), env_args.end());
        }
        for (std::size_t i = chosen ? first + 1 : first; i < args.size(); ++i) full.push_back(args[i]);
        std::reverse(full.begin(), full.end());
        app.parse(full);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto* sc = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sc->help();
        return kExitInvalid;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    }

    try {
        if (simulate->parsed() || (wf->parsed() && !cov3)) {
            if (wf->parsed()) sim.program = "wf";
            const auto doc = simulate_document(sim);
            emit(doc, out_path, out);
            if (!hist_path.empty()) {
                std::ostringstream csv;
                csv << "statistic,value,count\n";
                for (const char* stat : {"N_b", "D_ab"}) {
                    for (const auto& [v, c] : doc["report"][stat]["histogram"].items()) {
                        csv << stat << ',' << v << ',' << c.get<std::uint64_t>() << '\n';
                    }
                }
                write_text(hist_path, csv.str());
            }
        } else if (wf->parsed()) {
            WfRunParams p;
            p.h = sim.h;
            p.seed = sim.seed;
            p.runs = sim.runs;
            p.max_time = sim.max_time;
            p.bridge_correction = !sim.no_bridge;
            const Cov3Estimate est = cov3_mc(cx, cy, sim.b, p, sim.serial ? Execution::serial : Execution::parallel,
                                             sim.workers);
            nlohmann::ordered_json doc;
            doc["command"] = "wf";
            doc["cov3"] = {{"x", cx}, {"y", cy}, {"b", sim.b}, {"h", sim.h}, {"seed", sim.seed},
                           {"runs", est.runs}, {"truncated", est.truncated}, {"estimate", est.estimate},
                           {"std_error", est.std_error}};
            emit(doc, out_path, out);
        } else if (pde->parsed()) {
            const PdeSolution sol = pde_solve_checked(pde_b, pde_m, pde_tol);
            nlohmann::ordered_json doc;
            doc["command"] = "pde";
            doc["b"] = pde_b;
            doc["m"] = pde_m;
            doc["stencil"] = sol.stencil == Stencil::nine_point ? "nine_point" : "seven_point";
            doc["iterations"] = sol.stats.iterations;
            doc["relative_residual"] = sol.stats.rel_residual;
            doc["symmetry_defect"] = sol.symmetry_defect;
            doc["boundary_defect"] = sol.boundary_defect;
            doc["in_unit_interval"] = sol.in_unit_interval;
            doc["monotone"] = sol.monotone;
            const double c = std::min(0.2, 0.4 * pde_b);
            doc["f_at"] = {{"x", c}, {"y", c}, {"f", sol.grid.interpolate(c, c)}};
            // the corner abscissae start at b/64, which the half grid must resolve
            if ((pde_m + 1) % 2 == 0 && (pde_m + 1) / 2 >= 64) {
                const PdeSolution coarse = pde_solve_checked(pde_b, (pde_m + 1) / 2 - 1, pde_tol);
                const CornerReport rep = corner_report(coarse.grid, sol.grid);
                doc["corner"] = {{"x", rep.xs}, {"ratio", rep.ratio}, {"ratio_half_resolution", rep.ratio_coarse},
                                 {"extrapolated", rep.extrapolated}, {"refinement_error", rep.refinement_error},
                                 {"note", "f(x,x) b^2 / x^2; exploratory normalisation"}};
                doc["difference_to_half_resolution"] = grid_difference(coarse.grid, sol.grid);
            }
            if (!grid_path.empty()) {
                std::ofstream g(grid_path);
                if (!g) throw InputError("cannot write '" + grid_path + "'");
                sol.grid.write_csv(g);
            }
            emit(doc, out_path, out);
        } else if (bnd->parsed()) {
            const ThresholdPair pair(ba, bb);
            nlohmann::ordered_json doc;
            doc["command"] = "bounds";
            doc["a"] = ba;
            doc["b"] = bb;
            doc["bounds"] = to_json(bounds(pair));
            emit(doc, out_path, out);
        } else if (analyze->parsed()) {
            const ThresholdPair pair(aa, ab);
            const Interpolation mode = parse_interpolation(interp);
            const MarketSeries series = ingest_market_csv(csv_path);
            nlohmann::ordered_json doc;
            doc["command"] = "analyze";
            doc["csv"] = csv_path;
            doc["interp"] = interp;
            doc["renormalised_times"] = series.renormalised;
            doc["crossings"] = to_json(crossing_stats_from_series(series, pair, mode));
            emit(doc, out_path, out);
        } else if (report->parsed()) {
            nlohmann::ordered_json doc;
            doc["command"] = "report";
            auto& parts = doc["inputs"];
            parts = nlohmann::ordered_json::array();
            for (const auto& path : inputs) {
                std::ifstream in(path);
                if (!in) throw InputError("cannot open '" + path + "': file not found or unreadable");
                nlohmann::ordered_json part;
                try {
                    part = nlohmann::ordered_json::parse(in);
                } catch (const nlohmann::json::parse_error& e) {
                    throw InputError("'" + path + "' is not valid JSON: " + e.what());
                }
                parts.push_back({{"file", path}, {"content", std::move(part)}});
            }
            emit(doc, out_path, out);
        }
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

} // namespace cml
