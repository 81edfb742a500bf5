// dpsr: synthesis, degradation, training, streaming SR, evaluation, profiling.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dpsr/config.hpp"
#include "dpsr/dataio.hpp"
#include "dpsr/metrics.hpp"
#include "dpsr/model.hpp"
#include "dpsr/parallel.hpp"
#include "dpsr/profiler.hpp"
#include "dpsr/stream.hpp"
#include "dpsr/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dpsr;

namespace {

enum Exit { kOk = 0, kNumeric = 1, kIo = 2, kContract = 3, kConfig = 4 };

struct Manifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs, outputs;
  json resolved = json::object();
};

json config_json(const RunConfig& cfg) {
  json j = json::object();
  std::istringstream in(config_to_text(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_manifest(const fs::path& path, const Manifest& m) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  json j = {{"command", m.command}, {"config_path", m.config_path}, {"seed", m.seed},
            {"inputs", m.inputs},   {"outputs", m.outputs},         {"resolved_config", m.resolved},
            {"timestamp", stamp}};
  write_text(path, j.dump(2) + "\n");
}

fs::path manifest_for(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::vector<fs::path> list_cubes(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".hsc") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// Config file (if any), then --set overrides, in order.
RunConfig resolve_config(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'", kv, 0);
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const ContractError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kContract;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep pushbroom super-resolution toolkit"};
  app.require_subcommand(1);
  std::function<void()> action;

  // make-synth
  SynthOptions synth;
  std::uint32_t count = 16;
  std::string out_dir;
  auto* ms = app.add_subcommand("make-synth", "Write seeded synthetic HR cubes");
  ms->add_option("--seed", synth.seed, "Base seed; cube i uses seed + i");
  ms->add_option("--count", count, "Number of cubes");
  ms->add_option("--height", synth.height);
  ms->add_option("--width", synth.width);
  ms->add_option("--bands", synth.bands);
  ms->add_option("--smoothness", synth.smoothness, "Correlation length in pixels");
  ms->add_option("--endmembers", synth.endmembers);
  ms->add_option("--out-dir", out_dir)->required();
  ms->callback([&] {
    action = [&] {
      ensure_dir(out_dir);
      Manifest m{"make-synth", "", synth.seed, {}, {}, {}};
      for (std::uint32_t i = 0; i < count; ++i) {
        SynthOptions o = synth;
        o.seed = synth.seed + i;
        char name[32];
        std::snprintf(name, sizeof name, "cube_%04u.hsc", i);
        const fs::path p = fs::path(out_dir) / name;
        write_cube(p, make_synthetic(o));
        m.outputs.push_back(p.string());
      }
      m.resolved = {{"count", count}, {"height", synth.height}, {"width", synth.width}, {"bands", synth.bands},
                    {"smoothness", synth.smoothness}, {"endmembers", synth.endmembers}};
      write_manifest(fs::path(out_dir) / "manifest.json", m);
      std::cout << "wrote " << count << " cubes to " << out_dir << "\n";
    };
  });

  // degrade
  std::string in_path, out_path;
  std::uint32_t factor = 4;
  auto* dg = app.add_subcommand("degrade", "Bicubic downsample a cube (file or directory of cubes)");
  dg->add_option("--in", in_path)->required();
  dg->add_option("--out", out_path)->required();
  dg->add_option("--factor", factor);
  dg->callback([&] {
    action = [&] {
      Manifest m{"degrade", "", 0, {in_path}, {}, {{"factor", factor}}};
      if (fs::is_directory(in_path)) {
        ensure_dir(out_path);
        for (const auto& p : list_cubes(in_path)) {
          const fs::path o = fs::path(out_path) / p.filename();
          write_cube(o, bicubic_downsample(read_cube(p), factor));
          m.outputs.push_back(o.string());
        }
        write_manifest(fs::path(out_path) / "manifest.json", m);
      } else {
        const HsiCube lr = bicubic_downsample(read_cube(in_path), factor);
        write_cube(out_path, lr);
        m.outputs.push_back(out_path);
        write_manifest(manifest_for(out_path), m);
        std::cout << "wrote " << lr.height << "x" << lr.width << "x" << lr.bands << " cube to " << out_path << "\n";
      }
    };
  });

  // import
  std::string raw_path, header_path;
  auto* im = app.add_subcommand("import", "Convert a raw float32 raster with a text header into a cube");
  im->add_option("--raw", raw_path)->required();
  im->add_option("--header", header_path)->required();
  im->add_option("--out", out_path)->required();
  im->callback([&] {
    action = [&] {
      const HsiCube c = import_raw(raw_path, parse_raw_header(header_path));
      write_cube(out_path, c);
      write_manifest(manifest_for(out_path), {"import", "", 0, {raw_path, header_path}, {out_path}, {}});
      std::cout << "imported " << c.height << "x" << c.width << "x" << c.bands << " (" << c.valid_band_count()
                << " valid bands)\n";
    };
  });

  // train
  std::string config_path, train_dir, val_dir, log_path, init_path;
  std::vector<std::string> sets;
  auto* tr = app.add_subcommand("train", "Fit a model on HR cubes");
  tr->add_option("--config", config_path, "key = value file");
  tr->add_option("--set", sets, "key=value override (repeatable)");
  tr->add_option("--train-dir", train_dir)->required();
  tr->add_option("--val-dir", val_dir);
  tr->add_option("--out", out_path, "Checkpoint path")->required();
  tr->add_option("--log", log_path, "Training log CSV");
  tr->add_option("--init", init_path, "Start from this checkpoint");
  tr->callback([&] {
    action = [&] {
      RunConfig cfg = resolve_config(config_path, sets);
      std::vector<HsiCube> train, val;
      for (const auto& p : list_cubes(train_dir)) train.push_back(read_cube(p));
      if (!val_dir.empty())
        for (const auto& p : list_cubes(val_dir)) val.push_back(read_cube(p));
      if (train.empty()) throw ContractError("no .hsc cubes in " + train_dir);
      if (cfg.model.bands == 0) cfg.model.bands = train.front().bands;
      std::ofstream log;
      if (!log_path.empty()) {
        log.open(log_path);
        if (!log) throw IoError("cannot write " + log_path);
        log << train_log_csv_header() << "\n";
      }
      auto on_step = [&](const TrainLogRow& row) {
        if (log.is_open()) log << train_log_csv_row(row) << "\n" << std::flush;
        if (!std::isnan(row.val_mpsnr))
          std::cout << "step " << row.step << " loss " << row.loss.total << " val MPSNR " << row.val_mpsnr << " dB\n";
      };
      FitResult res = init_path.empty()
                          ? fit(train, val, cfg.model, cfg.train, on_step)
                          : fit_from(load_params(init_path), train, val, cfg.train, on_step);
      save_params(out_path, res.params);
      if (!val.empty()) {
        std::cout << "best val MPSNR " << res.best_val_mpsnr << " dB at step " << res.best_step
                  << " (bicubic " << baseline_mpsnr(val, cfg.model.scale) << " dB)\n";
      }
      Manifest m{"train", config_path, cfg.train.seed, {train_dir, val_dir}, {out_path}, config_json(cfg)};
      if (!log_path.empty()) m.outputs.push_back(log_path);
      write_manifest(manifest_for(out_path), m);
    };
  });

  // sr-stream
  std::string model_path, csv_path;
  double budget_ms = kPrismaLineMs;
  bool cadence = false;
  auto* ss = app.add_subcommand("sr-stream", "Super-resolve an LR cube line by line");
  ss->add_option("--model", model_path)->required();
  ss->add_option("--in", in_path)->required();
  ss->add_option("--out", out_path)->required();
  ss->add_option("--budget-ms", budget_ms, "Per-line budget (4.32 ms PRISMA; 4.34 also quoted)");
  ss->add_flag("--cadence", cadence, "Fixed-cadence acquisition on a virtual clock");
  ss->add_option("--csv", csv_path, "Per-line latency CSV");
  ss->callback([&] {
    action = [&] {
      const DpsrParams p = load_params(model_path);
      const StreamResult res = run_stream(read_cube(in_path), p, {budget_ms, cadence});
      write_cube(out_path, res.sr);
      std::cout << format_stream_report(res.report);
      Manifest m{"sr-stream", "", 0, {model_path, in_path}, {out_path}, {{"budget_ms", budget_ms}, {"cadence", cadence}}};
      if (!csv_path.empty()) {
        write_text(csv_path, stream_csv(res.report));
        m.outputs.push_back(csv_path);
      }
      write_manifest(manifest_for(out_path), m);
    };
  });

  // eval
  std::string pred_path, ref_path, dataset = "synthetic", config_name = "dpsr";
  bool with_baseline = false;
  auto* ev = app.add_subcommand("eval", "Score a streamed SR cube against HR ground truth");
  ev->add_option("--pred", pred_path)->required();
  ev->add_option("--ref", ref_path)->required();
  ev->add_option("--factor", factor);
  ev->add_option("--csv", csv_path, "Append the report row here");
  ev->add_option("--dataset", dataset);
  ev->add_option("--name", config_name);
  ev->add_flag("--baseline", with_baseline, "Also score bicubic interpolation of the reference");
  ev->callback([&] {
    action = [&] {
      const HsiCube ref = read_cube(ref_path);
      const EvalReport rep = evaluate(read_cube(pred_path), ref, factor);
      std::cout << format_report(rep) << report_csv_header() << "\n"
                << report_csv_row(rep, dataset, config_name, factor) << "\n";
      std::string rows = report_csv_row(rep, dataset, config_name, factor) + "\n";
      if (with_baseline) {
        const EvalReport b = baseline_bicubic(ref, factor);
        std::cout << report_csv_row(b, dataset, "bicubic", factor) << "\n";
        rows += report_csv_row(b, dataset, "bicubic", factor) + "\n";
      }
      if (!csv_path.empty()) {
        const bool fresh = !fs::exists(csv_path);
        std::ofstream out(csv_path, std::ios::app);
        if (!out) throw IoError("cannot write " + csv_path);
        if (fresh) out << report_csv_header() << "\n";
        out << rows;
        write_manifest(manifest_for(csv_path), {"eval", "", 0, {pred_path, ref_path}, {csv_path}, {{"factor", factor}}});
      }
    };
  });

  // profile
  std::uint64_t width = 32;
  std::uint32_t bands = 202;
  auto* pr = app.add_subcommand("profile", "Parameter, FLOPs and state-memory accounting");
  pr->add_option("--config", config_path);
  pr->add_option("--set", sets, "key=value override (repeatable)");
  pr->add_option("--width", width, "LR line width");
  pr->add_option("--bands", bands);
  pr->add_option("--csv", csv_path);
  pr->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve_config(config_path, sets);
      const CostReport rep = profile(cfg.model, width, bands);
      std::cout << format_cost_report(rep) << "\n" << table1_comparison(rep);
      if (!csv_path.empty()) {
        write_text(csv_path, cost_csv_header() + "\n" + cost_csv_row(rep) + "\n");
        RunConfig echo = cfg;
        echo.model.bands = bands;
        write_manifest(manifest_for(csv_path), {"profile", config_path, 0, {}, {csv_path}, config_json(echo)});
      }
    };
  });

  // simulate
  std::uint32_t sim_height = 64;
  std::uint32_t sim_width = 64;
  std::uint64_t seed = 0;
  auto* sm = app.add_subcommand("simulate", "Benchmark the line budget on a synthetic pushbroom acquisition");
  sm->add_option("--config", config_path);
  sm->add_option("--set", sets, "key=value override (repeatable)");
  sm->add_option("--model", model_path, "Checkpoint; otherwise a seeded random init");
  sm->add_option("--lines", sim_height);
  sm->add_option("--width", sim_width);
  sm->add_option("--bands", bands);
  sm->add_option("--seed", seed);
  sm->add_option("--budget-ms", budget_ms);
  sm->add_flag("--cadence", cadence);
  sm->add_option("--csv", csv_path);
  sm->callback([&] {
    action = [&] {
      RunConfig cfg = resolve_config(config_path, sets);
      DpsrParams p;
      if (!model_path.empty()) {
        p = load_params(model_path);
      } else {
        cfg.model.bands = bands;
        p = init_params(cfg.model, seed);
      }
      SynthOptions o;
      o.seed = seed;
      o.height = sim_height;
      o.width = sim_width;
      o.bands = p.config.bands;
      const StreamResult res = run_stream(make_synthetic(o), p, {budget_ms, cadence});
      std::cout << format_stream_report(res.report);
      const CostReport cost = profile(p.config, sim_width, p.config.bands);
      std::cout << "accounted state  " << cost.state.total() << " bytes (" << cost.param_count << " params)\n";
      if (!csv_path.empty()) {
        write_text(csv_path, stream_csv(res.report));
        write_manifest(manifest_for(csv_path), {"simulate", config_path, seed, {model_path}, {csv_path}, config_json(cfg)});
      }
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kContract;
  }
  return run_guarded(action);
}
