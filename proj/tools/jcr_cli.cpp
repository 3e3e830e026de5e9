#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>
#include <string>

#include "jcr/pipeline.hpp"

namespace {

void configure_logging() {
  spdlog::set_pattern("[%l] %v");
  const char* level = std::getenv("JCR_LOG");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"jcr: joint hand-eye calibration, scale recovery and scene fields"};
  std::string manifest_path, out_dir, stage_name = "run";
  std::uint64_t seed = 0;
  bool force = false;
  app.add_option("--manifest", manifest_path, "pipeline manifest (JSON)")->required();
  auto* out_opt = app.add_option("--out", out_dir, "output directory (overrides manifest output_dir)");
  auto* seed_opt = app.add_option("--seed", seed, "seed (overrides manifest seed)");
  app.add_option("--stage", stage_name, "synth | align | calibrate | reconstruct | train-field | query | eval | run")
      ->check(CLI::IsMember({"synth", "align", "calibrate", "reconstruct", "train-field", "query", "eval", "run"}));
  app.add_flag("--force-uncalibrated", force, "reconstruct even when calibration did not converge");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  configure_logging();

  try {
    jcr::pipeline::Options opt;
    if (*out_opt) opt.output_dir = out_dir;
    if (*seed_opt) opt.seed = seed;
    opt.force_uncalibrated = force;
    jcr::pipeline::Context ctx;
    ctx.manifest = jcr::pipeline::load_manifest(manifest_path, opt);
    ctx.options = opt;
    ctx.log = [](int level, const std::string& msg) {
      if (level <= 0) spdlog::debug(msg);
      else if (level == 1) spdlog::info(msg);
      else spdlog::warn(msg);
    };
    jcr::pipeline::run_stage(ctx, jcr::pipeline::stage_from_string(stage_name));
  } catch (const jcr::Error& e) {
    spdlog::error("{}", e.what());
    return jcr::exit_code(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
