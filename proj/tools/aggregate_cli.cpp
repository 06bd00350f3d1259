#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "aggregate/aggregate.hpp"

namespace fs = std::filesystem;
using namespace aggr;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

bool g_use_cache = true;

void configure_threads() {
#ifdef _OPENMP
  if (const char* env = std::getenv("AGGR_NUM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

std::string absolute(const std::string& p) { return fs::absolute(fs::path(p)).lexically_normal().string(); }

int cmd_init(const std::string& scene_path, const std::string& out_dir) {
  const SceneConfig scene = load_scene(scene_path);
  const Problem pr = make_problem(scene, g_use_cache);
  const auto instances = initialize_layout(pr, scene.seed);
  const json layout = layout_to_json(instances, pr.prototypes);
  const WorldSamples ws = world_sample_positions(instances, pr.prototypes);
  std::cerr << "elements: " << instances.size() << ", samples: " << ws.size() << ", grid: " << pr.grid.dims[0]
            << "x" << pr.grid.dims[1] << "x" << pr.grid.dims[2] << ", max domain violation: "
            << max_violation(ws, scene.domain) << "\n";
  if (out_dir.empty()) {
    std::cout << layout.dump(2) << "\n";
  } else {
    fs::create_directories(out_dir);
    open_output(fs::path(out_dir) / "layout.json") << layout.dump(2) << "\n";
  }
  return kOk;
}

int cmd_run(const std::string& scene_path, const std::string& out_dir, int snapshot_every) {
  const auto start = std::chrono::steady_clock::now();
  const std::string bytes = read_file(scene_path);
  const SceneConfig scene = load_scene(scene_path);
  const Problem pr = make_problem(scene, g_use_cache);
  auto instances = initialize_layout(pr, scene.seed);

  const fs::path out(out_dir);
  fs::create_directories(out);
  if (snapshot_every > 0) fs::create_directories(out / "snapshots");
  auto trace_file = open_output(out / "trace.jsonl");

  LoopCallbacks cb;
  cb.on_iteration = [&](const TraceRecord& r, const std::vector<ElementInstance>&, const ComplianceResult& res) {
    json line = trace_record_json(r);
    if (snapshot_every > 0 && (r.iteration + 1) % snapshot_every == 0) {
      std::ostringstream name;
      name << "density_" << std::setw(5) << std::setfill('0') << r.iteration + 1 << ".vtk";
      auto f = open_output(out / "snapshots" / name.str());
      write_vtk(f, pr.grid, res.density.rho, &res.state.u);
      line["snapshot"] = "snapshots/" + name.str();
    }
    trace_file << line.dump() << "\n" << std::flush;
  };
  cb.on_stage = [&](const StageRecord& s) {
    std::cerr << std::setw(10) << s.plan.label << "  alpha " << std::setw(8) << s.plan.alpha << "  beta "
              << s.plan.beta << "  iterations " << s.iterations << "  " << std::fixed << std::setprecision(2)
              << s.seconds << " s" << std::defaultfloat << std::setprecision(6) << "\n";
  };
  const OptimizationTrace trace = continuation_loop(pr, instances, cb);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json manifest = manifest_json(bytes, scene, trace, seconds);
  manifest["scene_path"] = absolute(scene_path);
  open_output(out / "manifest.json") << manifest.dump(2) << "\n";
  open_output(out / "layout.json") << layout_to_json(instances, pr.prototypes).dump(2) << "\n";
  {
    auto obj = open_output(out / "aggregate.obj");
    export_final(obj, instances, pr.prototypes);
  }
  if (trace.aborted) {
    std::cerr << "error: run aborted: " << trace.error << "\n";
    return kCheckFailed;
  }
  std::cerr << "iterations " << trace.records.size() << ", compliance " << trace.initial_compliance << " -> "
            << trace.final_compliance << ", f_domain " << trace.final_f_domain << "\n";
  return kOk;
}

int cmd_check_grad(const std::string& scene_path, double step, double tolerance) {
  const SceneConfig scene = load_scene(scene_path);
  const Problem pr = make_problem(scene, g_use_cache);
  const auto instances = initialize_layout(pr, scene.seed);
  const FdReport rep =
      compliance_gradient_check(pr, instances, scene.schedule.alpha0, scene.schedule.beta0, step);
  std::cout << std::left << std::setw(8) << "kind" << std::right << std::setw(8) << "count" << std::setw(16)
            << "max abs err" << std::setw(16) << "max rel err" << "\n";
  for (const auto& g : rep.groups)
    std::cout << std::left << std::setw(8) << g.kind << std::right << std::setw(8) << g.count << std::setw(16)
              << std::scientific << std::setprecision(3) << g.max_abs << std::setw(16) << g.max_rel
              << std::defaultfloat << "\n";
  if (!rep.passed(tolerance)) {
    const auto& slot = make_layout(instances, pr.prototypes).slots[rep.worst];
    std::cout << "FAIL: worst parameter " << rep.worst << " (element " << slot.instance << ", "
              << param_kind_name(slot.kind) << " " << slot.index << "): analytic " << std::setprecision(10)
              << rep.analytic[rep.worst] << ", finite difference " << rep.numeric[rep.worst] << "\n";
    return kCheckFailed;
  }
  std::cout << "OK: max relative error " << std::scientific << std::setprecision(3) << rep.max_rel << " <= "
            << tolerance << "\n";
  return kOk;
}

int cmd_export(const std::string& dir) {
  const fs::path d(dir);
  const json manifest = json::parse(read_file((d / "manifest.json").string()));
  if (!manifest.contains("scene_path")) throw ParseError((d / "manifest.json").string(), "missing scene_path");
  const SceneConfig scene = load_scene(manifest["scene_path"].get<std::string>());
  const Problem pr = make_problem(scene, g_use_cache);
  const std::string layout_path = (d / "layout.json").string();
  const auto instances = layout_from_json(json::parse(read_file(layout_path)), pr.prototypes, layout_path);
  {
    auto obj = open_output(d / "aggregate.obj");
    export_final(obj, instances, pr.prototypes);
  }
  const auto plan = plan_schedule(scene.schedule);
  const ComplianceResult r =
      evaluate_compliance(pr, instances, density_params(pr, plan.back().alpha, plan.back().beta), false);
  auto vtk = open_output(d / "final.vtk");
  write_vtk(vtk, pr.grid, r.density.rho, &r.state.u);
  std::cerr << "compliance " << r.compliance << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimize aggregates of elements for stiffness"};
  app.require_subcommand(1);
  bool no_cache = false;
  app.add_flag("--no-cache", no_cache, "Do not read or write .protocache files next to OBJ meshes");
  std::string scene_path, out_dir, dir;
  int snapshot_every = 0;
  double step = 1e-5, tolerance = 1e-4;

  auto* init = app.add_subcommand("init", "Initialize a layout and print it");
  init->add_option("scene", scene_path, "Scene JSON")->required();
  init->add_option("--out", out_dir, "Write layout.json into this directory");
  auto* run = app.add_subcommand("run", "Run the full optimization");
  run->add_option("scene", scene_path, "Scene JSON")->required();
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--snapshot-every", snapshot_every, "Write a density snapshot every N iterations")
      ->check(CLI::NonNegativeNumber);
  auto* check = app.add_subcommand("check-grad", "Compare the analytic gradient with finite differences");
  check->add_option("scene", scene_path, "Scene JSON")->required();
  check->add_option("--step", step, "Relative finite-difference step");
  check->add_option("--tolerance", tolerance, "Maximum relative error");
  auto* exp = app.add_subcommand("export", "Re-export geometry and the final density of a run directory");
  exp->add_option("dir", dir, "Run output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  configure_threads();
  g_use_cache = !no_cache;
  try {
    if (*init) return cmd_init(scene_path, out_dir);
    if (*run) return cmd_run(scene_path, out_dir, snapshot_every);
    if (*check) return cmd_check_grad(scene_path, step, tolerance);
    if (*exp) return cmd_export(dir);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kUsage;
}
