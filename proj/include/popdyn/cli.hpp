#pragma once

// Command-line front end. Settings resolve as: built-in defaults, then --config JSON, then
// flags given explicitly on the command line.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "popdyn/pipeline.hpp"
#include "popdyn/synth.hpp"

namespace popdyn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitStage = 3;

namespace detail {

// Registers one RunConfig field as a kebab-case flag; explicitly given values are collected as JSON
// so they go through the same checks as config files.
class ConfigFlags {
 public:
  template <class T>
  void add(CLI::App* app, const std::string& field, const std::string& help) {
    auto value = std::make_shared<T>();
    std::string flag = "--" + field;
    for (auto& c : flag)
      if (c == '_') c = '-';
    CLI::Option* opt = app->add_option(flag, *value, help);
    entries_.push_back({opt, [field, value](nlohmann::json& j) { j[field] = *value; }});
  }

  nlohmann::json explicit_values() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& e : entries_)
      if (e.option->count() > 0) e.store(j);
    return j;
  }

 private:
  struct Entry {
    CLI::Option* option;
    std::function<void(nlohmann::json&)> store;
  };
  std::vector<Entry> entries_;
};

inline void add_run_flags(CLI::App* app, ConfigFlags& f, std::string& config_path) {
  app->add_option("--config", config_path, "JSON file with RunConfig fields");
  f.add<std::string>(app, "input", "input JSONL or CSV file");
  f.add<std::string>(app, "out_dir", "output directory");
  f.add<double>(app, "grid_step", "grid spacing in seconds");
  f.add<std::string>(app, "align", "pad | truncate");
  f.add<unsigned>(app, "threads", "worker threads (0: all cores)");
}

inline void add_cluster_flags(CLI::App* app, ConfigFlags& f) {
  f.add<std::size_t>(app, "min_samples", "HDBSCAN min_samples");
  f.add<std::size_t>(app, "min_cluster_size", "HDBSCAN min_cluster_size");
  f.add<std::string>(app, "panel_order", "size | max_likes");
  f.add<std::size_t>(app, "plot_clusters", "clusters to plot (0: all)");
  f.add<std::size_t>(app, "boost_cap", "largest boost count allowed when choosing lambda");
  f.add<std::string>(app, "derivative_scale", "raw | relative");
  f.add<std::string>(app, "metric", "l1 | weighted_l1 | dtw | fastdtw");
  f.add<double>(app, "penalty_epsilon", "floor of the weighted-L1 penalty");
}

inline void add_dtw_flags(CLI::App* app, ConfigFlags& f) {
  f.add<std::size_t>(app, "dtw_window", "Sakoe-Chiba half width in samples (0: automatic)");
  f.add<std::size_t>(app, "fastdtw_radius", "FastDTW radius");
}

inline void add_naive_flags(CLI::App* app, ConfigFlags& f) {
  f.add<double>(app, "noise_threshold", "stop re-clustering once noise is at most this fraction");
  f.add<int>(app, "max_rounds", "maximum clustering rounds");
}

inline void add_vector_flags(CLI::App* app, ConfigFlags& f) {
  f.add<std::uint64_t>(app, "ae_seed", "autoencoder initialization seed");
  f.add<int>(app, "ae_epochs", "autoencoder training epochs");
  f.add<double>(app, "ae_step_size", "autoencoder gradient step");
  f.add<std::size_t>(app, "ae_hidden", "autoencoder hidden width");
  f.add<std::string>(app, "similarity_kernel", "linear | exponential");
  f.add<bool>(app, "standardize", "z-score tweet vector components (true | false)");
}

inline RunConfig resolve_config(const std::string& config_path, const ConfigFlags& flags) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  apply_json(cfg, flags.explicit_values());
  cfg.validate();
  return cfg;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"popdyn: cluster like-count time series of social posts"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "popdyn 0.1.0");

  std::string config_path;
  detail::ConfigFlags ingest_flags, naive_flags, vector_flags, dtw_flags, report_flags;

  auto* ingest = app.add_subcommand("ingest", "parse, window and grid the input; writes windows.csv");
  detail::add_run_flags(ingest, ingest_flags, config_path);

  auto* naive = app.add_subcommand("cluster-naive", "iterative HDBSCAN on a distance matrix of the curves");
  detail::add_run_flags(naive, naive_flags, config_path);
  detail::add_cluster_flags(naive, naive_flags);
  detail::add_dtw_flags(naive, naive_flags);
  detail::add_naive_flags(naive, naive_flags);

  auto* vector = app.add_subcommand("cluster-vector", "HDBSCAN on tweet vectors");
  detail::add_run_flags(vector, vector_flags, config_path);
  detail::add_cluster_flags(vector, vector_flags);
  detail::add_vector_flags(vector, vector_flags);

  auto* dtw = app.add_subcommand("diagnose-dtw", "correlation between record count and mean DTW distance");
  detail::add_run_flags(dtw, dtw_flags, config_path);
  detail::add_dtw_flags(dtw, dtw_flags);

  auto* report = app.add_subcommand("report", "summarize report.json as a markdown table");
  report->add_option("--config", config_path, "JSON file with RunConfig fields");
  report_flags.add<std::string>(report, "out_dir", "output directory holding report.json");

  SynthConfig synth_cfg;
  std::string synth_profiles, synth_output, synth_out_dir = "out";
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with known popularity profiles");
  synth->add_option("--n", synth_cfg.n, "number of series");
  synth->add_option("--seed", synth_cfg.seed, "random seed");
  synth->add_option("--profiles", synth_profiles, "comma separated profile names");
  synth->add_option("--output", synth_output, "JSONL path (default: <out-dir>/synthetic.jsonl)");
  synth->add_option("--out-dir", synth_out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << "popdyn 0.1.0\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (*ingest) {
      const auto cfg = detail::resolve_config(config_path, ingest_flags);
      const auto p = load_corpus(cfg);
      std::ostringstream csv;
      csv << "id,records,t10,t95,delta_t,t_max,n_max_likes,clipped,grid_points\n";
      for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& w = p.windows[i];
        csv << w.id << ',' << w.samples.size() << ',' << format_double(w.t10) << ',' << format_double(w.t95) << ','
            << format_double(w.delta_t) << ',' << format_double(w.t_max) << ',' << format_double(w.n_max_likes) << ','
            << (w.clipped ? 1 : 0) << ',' << p.window_grids[i].n_points() << '\n';
      }
      write_text(std::filesystem::path(cfg.out_dir) / "windows.csv", csv.str());
      out << p.size() << " series windowed, " << p.inert_ids.size() << " inert, " << p.corpus.n_points
          << " grid points after alignment\n";
    } else if (*naive) {
      const auto cfg = detail::resolve_config(config_path, naive_flags);
      const auto r = run_naive(cfg);
      out << "naive: " << r.summary.n_clusters << " clusters, noise " << format_sig(100.0 * r.summary.noise_rate, 4)
          << "%, " << r.summary.rounds_run << " round(s)\n";
      for (const auto& w : r.report["warnings"]) err << "warning: " << w.get<std::string>() << '\n';
    } else if (*vector) {
      const auto cfg = detail::resolve_config(config_path, vector_flags);
      const auto r = run_vector(cfg);
      out << "vector: " << r.summary.n_clusters << " clusters, noise " << format_sig(100.0 * r.summary.noise_rate, 4)
          << "%\n";
      for (const auto& w : r.report["warnings"]) err << "warning: " << w.get<std::string>() << '\n';
    } else if (*dtw) {
      const auto cfg = detail::resolve_config(config_path, dtw_flags);
      const auto b = run_diagnose_dtw(cfg);
      out << "Spearman rho (records vs mean DTW) = "
          << (b.spearman ? format_sig(*b.spearman, 4) : std::string("undefined")) << " over " << b.ids.size()
          << " series\n";
    } else if (*report) {
      const auto cfg = detail::resolve_config(config_path, report_flags);
      const auto path = std::filesystem::path(cfg.out_dir) / "report.json";
      if (!std::filesystem::exists(path)) throw ValidationError("no report.json in '" + cfg.out_dir + "'");
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(std::ifstream(path));
      } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("report.json is not valid JSON: " + std::string(e.what()));
      }
      const auto text = render_report(j);
      write_text(std::filesystem::path(cfg.out_dir) / "report.md", text);
      out << text;
    } else if (*synth) {
      if (!synth_profiles.empty()) {
        synth_cfg.profiles.clear();
        std::stringstream ss(synth_profiles);
        for (std::string name; std::getline(ss, name, ',');) synth_cfg.profiles.push_back(parse_profile(name));
      }
      const auto corpus = generate_synthetic(synth_cfg);
      const std::filesystem::path dir(synth_out_dir);
      const std::filesystem::path data = synth_output.empty() ? dir / "synthetic.jsonl" : std::filesystem::path(synth_output);
      std::ostringstream jsonl, labels;
      write_jsonl(jsonl, corpus);
      write_profile_labels(labels, corpus);
      write_text(data, jsonl.str());
      write_text(dir / "synthetic_labels.csv", labels.str());
      out << corpus.size() << " series written to " << data.string() << '\n';
    }
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const StageError& e) {
    err << "error in stage " << e.what() << '\n';
    return kExitStage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitStage;
  }
  return kExitOk;
}

}  // namespace popdyn
