// gridfed command line: scenario data, training, evaluation and plots.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "gridfed/config.hpp"
#include "gridfed/experiment.hpp"
#include "gridfed/networked.hpp"
#include "gridfed/plot.hpp"

namespace fs = std::filesystem;
using namespace gridfed;

namespace {

struct CommonOptions {
  std::string config;
  std::string variant;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::optional<int> rounds;
  std::optional<int> local_updates;
};

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (!o.variant.empty()) cfg.variant = parse_variant(o.variant);
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.rounds) {
    cfg.rounds = *o.rounds;
    cfg.eval_every = std::min(cfg.eval_every, cfg.rounds);
  }
  if (o.local_updates) cfg.local_updates = *o.local_updates;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, CommonOptions& o, bool with_variant = true) {
  app->add_option("--config", o.config, "JSON config file (defaults apply to missing keys)")->check(CLI::ExistingFile);
  if (with_variant) {
    app->add_option("--variant", o.variant, "Upperbound | IndAgent | FL | FLPersonalization");
  }
  app->add_option("--seed", o.seeds, "seed (repeatable); defaults to the config's seed list");
  app->add_option("--out", o.out, "output directory");
}

// Weather a client sees in its first training (or test) episode, joined with solar, load and grid.
std::string scenario_csv(const ExperimentConfig& cfg, std::uint64_t seed, Phase phase, std::uint64_t episode) {
  const auto& sc = cfg.scenario;
  const GridSeries grid = grid_series(sc, seed);
  std::ostringstream os;
  os << "building,hour,temperature,humidity,solar,load,price,emission_rate\n";
  for (std::size_t b = 0; b < sc.buildings.size(); ++b) {
    const std::uint64_t wseed = derive_seed(
        seed, {phase == Phase::Train ? stream::kTrainWeather : stream::kTestWeather, static_cast<std::uint64_t>(b)});
    const WeatherSeries w = generate_weather(wseed, episode, sc.noise(phase), sc.weather);
    for (int t = 0; t < kHoursPerDay; ++t) {
      os << b << ',' << t << ',' << fmt_double(w.temperature[t]) << ',' << fmt_double(w.humidity[t]) << ','
         << fmt_double(solar_generation(sc.buildings[b], w, t, sc.solar)) << ','
         << fmt_double(nonshiftable_load(sc.buildings[b], w, t, sc.load)) << ',' << fmt_double(grid.price[t]) << ','
         << fmt_double(grid.emission_rate[t]) << '\n';
    }
  }
  return os.str();
}

Phase parse_phase(const std::string& s) {
  if (s == "train") return Phase::Train;
  if (s == "test") return Phase::Test;
  throw ConfigError("phase must be 'train' or 'test'");
}

void log_progress(const ExperimentConfig& cfg, std::uint64_t seed, int round) {
  if (round % cfg.eval_every == 0 || round == cfg.rounds) {
    std::fprintf(stderr, "[%s seed %llu] round %d/%d\n", to_string(cfg.variant).c_str(),
                 static_cast<unsigned long long>(seed), round, cfg.rounds);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridfed: federated TRPO for building microgrids"};
  app.require_subcommand(1);

  // generate-data
  CommonOptions gen_opts;
  int gen_episode = 0;
  auto* gen = app.add_subcommand("generate-data", "write train/test scenario CSVs and the resolved config");
  add_common(gen, gen_opts, false);
  gen->add_option("--episode", gen_episode, "episode index within the weather stream")->check(CLI::NonNegativeNumber);

  // scenario dump
  auto* scenario = app.add_subcommand("scenario", "scenario utilities");
  scenario->require_subcommand(1);
  CommonOptions dump_opts;
  std::string dump_phase = "train";
  int dump_episode = 0;
  auto* dump = scenario->add_subcommand("dump", "print one episode of generated series as CSV");
  add_common(dump, dump_opts, false);
  dump->add_option("--phase", dump_phase, "train | test");
  dump->add_option("--episode", dump_episode, "episode index")->check(CLI::NonNegativeNumber);

  // train
  CommonOptions train_opts;
  std::string mode = "in-process";
  std::string listen_addr, connect_addr;
  int building = -1;
  auto* train = app.add_subcommand("train", "train one variant for each seed");
  add_common(train, train_opts);
  train->add_option("--mode", mode, "in-process | networked")->check(CLI::IsMember({"in-process", "networked"}));
  train->add_option("--listen", listen_addr, "networked server address host:port");
  train->add_option("--connect", connect_addr, "networked client: server address host:port");
  train->add_option("--building", building, "networked client: building index");
  train->add_option("--rounds", train_opts.rounds, "communication rounds");
  train->add_option("--local-updates", train_opts.local_updates, "TRPO updates per client per round");

  // evaluate
  CommonOptions eval_opts;
  std::string checkpoint_dir;
  auto* eval = app.add_subcommand("evaluate", "evaluate saved checkpoints on the test distribution");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoints", checkpoint_dir, "directory holding the run's .gfnn files (default: --out)");

  // plot
  std::vector<std::string> plot_inputs;
  std::string plot_out = "plots";
  auto* plot = app.add_subcommand("plot", "render metrics CSVs to SVG charts");
  plot->add_option("inputs", plot_inputs, "metrics CSV files, or directories searched for *_metrics.csv")
      ->required();
  plot->add_option("--out", plot_out, "output directory");

  // default-config
  auto* defcfg = app.add_subcommand("default-config", "print the built-in configuration as JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const ExperimentConfig cfg = resolve(gen_opts);
      fs::create_directories(cfg.out_dir);
      for (auto seed : cfg.seeds) {
        for (Phase p : {Phase::Train, Phase::Test}) {
          const fs::path path =
              cfg.out_dir / ("scenario_" + std::string(to_string(p)) + "_seed" + std::to_string(seed) + ".csv");
          write_text_atomic(path, scenario_csv(cfg, seed, p, static_cast<std::uint64_t>(gen_episode)));
          std::cout << path.string() << '\n';
        }
      }
      write_text_atomic(cfg.out_dir / "config.json", config_to_json(cfg).dump(2) + "\n");
      std::cout << (cfg.out_dir / "config.json").string() << '\n';
    } else if (*dump) {
      const ExperimentConfig cfg = resolve(dump_opts);
      const std::string text =
          scenario_csv(cfg, cfg.seeds.front(), parse_phase(dump_phase), static_cast<std::uint64_t>(dump_episode));
      if (dump_opts.out.empty()) {
        std::cout << text;
      } else {
        // --out names a file here.
        write_text_atomic(dump_opts.out, text);
      }
    } else if (*train) {
      ExperimentConfig cfg = resolve(train_opts);
      if (mode == "in-process") {
        for (auto seed : cfg.seeds) {
          RunHooks hooks;
          hooks.on_round_end = [&](int r) { log_progress(cfg, seed, r); };
          run_variant(cfg, seed, hooks);
          std::cout << run_stem(cfg, seed).string() << "_metrics.csv\n";
        }
      } else if (!connect_addr.empty()) {
        if (building < 0) throw ConfigError("--connect requires --building");
        if (cfg.seeds.size() != 1) throw ConfigError("a networked client runs exactly one --seed");
        run_client(cfg, cfg.seeds.front(), building, parse_endpoint(connect_addr));
      } else {
        for (auto seed : cfg.seeds) {
          RunHooks hooks;
          hooks.on_round_end = [&](int r) { log_progress(cfg, seed, r); };
          RunResult res;
          if (!listen_addr.empty()) {
            // Clients run elsewhere and write their own checkpoints.
            res = run_server(cfg, seed, parse_endpoint(listen_addr), hooks);
          } else {
            res = run_networked_local(cfg, seed, hooks);
            res.final_params.clear();  // clients already wrote checkpoints
          }
          write_run_outputs(cfg, seed, res);
          std::cout << run_stem(cfg, seed).string() << "_metrics.csv\n";
        }
      }
    } else if (*eval) {
      const ExperimentConfig cfg = resolve(eval_opts);
      const ClientSettings settings = cfg.client_settings();
      const fs::path ckpt_dir = checkpoint_dir.empty() ? cfg.out_dir : fs::path(checkpoint_dir);
      for (auto seed : cfg.seeds) {
        std::vector<MetricsRow> rows;
        std::vector<TraceRow> trace;
        const std::string stem = to_string(cfg.variant) + "_seed" + std::to_string(seed);
        for (std::size_t b = 0; b < cfg.scenario.buildings.size(); ++b) {
          PersonalizedActorCritic model(settings.model);
          model.set_flat(load_checkpoint(ckpt_dir / (stem + "_building" + std::to_string(b) + ".gfnn")));
          const EvalMetrics m = evaluate(model, cfg.scenario, static_cast<int>(b), settings.env, seed,
                                         cfg.eval_episodes, &trace);
          rows.push_back({cfg.variant, seed, cfg.rounds, static_cast<int>(b), m});
        }
        write_text_atomic(cfg.out_dir / (stem + "_eval.csv"), metrics_csv(rows));
        write_text_atomic(cfg.out_dir / (stem + "_trace.csv"), trace_csv(trace));
        std::cout << (cfg.out_dir / (stem + "_eval.csv")).string() << '\n';
      }
    } else if (*plot) {
      std::vector<fs::path> files;
      for (const auto& in : plot_inputs) {
        if (fs::is_directory(in)) {
          std::vector<fs::path> found;
          for (const auto& e : fs::directory_iterator(in)) {
            const std::string name = e.path().filename().string();
            if (name.size() > 12 && name.ends_with("_metrics.csv")) found.push_back(e.path());
          }
          std::sort(found.begin(), found.end());
          files.insert(files.end(), found.begin(), found.end());
        } else {
          files.emplace_back(in);
        }
      }
      if (files.empty()) throw ConfigError("no metrics CSVs found");
      for (const auto& p : plot_metrics(files, plot_out)) std::cout << p.string() << '\n';
    } else if (*defcfg) {
      std::cout << config_to_json(ExperimentConfig{}).dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "gridfed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
