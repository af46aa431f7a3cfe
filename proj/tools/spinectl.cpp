#include <CLI11.hpp>

#include "spine/cli.hpp"

using namespace spine;

int main(int argc, char** argv) {
  CLI::App app{"two-stage vertebra segmentation, localization and identification"};
  app.require_subcommand(1);

  cli::PhantomGenArgs gen;
  auto* sc_gen = app.add_subcommand("phantom-gen", "generate a synthetic phantom dataset");
  sc_gen->add_option("--out", gen.out_dir, "output dataset directory")->required();
  sc_gen->add_option("--count", gen.count, "number of cases");
  sc_gen->add_option("--seed", gen.seed, "master seed");
  sc_gen->add_option("--config", gen.config_path, "phantom spec JSON (defaults used if omitted)");

  cli::TrainArgs t1, t2;
  std::uint64_t seed1 = 0, seed2 = 0;
  auto* sc_t1 = app.add_subcommand("train-stage1", "train the semantic segmentation net");
  sc_t1->add_option("--config", t1.config_path, "training config JSON")->required();
  auto* opt_seed1 = sc_t1->add_option("--seed", seed1, "override the config seed");
  auto* sc_t2 = app.add_subcommand("train-stage2", "train the iterative instance net");
  sc_t2->add_option("--config", t2.config_path, "training config JSON")->required();
  auto* opt_seed2 = sc_t2->add_option("--seed", seed2, "override the config seed");

  cli::InferArgs inf;
  std::vector<int> window, patch;
  auto* sc_inf = app.add_subcommand("infer", "run the two-stage cascade on a volume");
  sc_inf->add_option("--volume", inf.volume_path, "input volume header (.json)")->required();
  sc_inf->add_option("--stage1", inf.stage1_checkpoint, "stage-1 checkpoint")->required();
  sc_inf->add_option("--stage2", inf.stage2_checkpoint, "stage-2 checkpoint")->required();
  sc_inf->add_option("--out", inf.out_dir, "result bundle directory")->required();
  sc_inf->add_option("--window", window, "stage-1 window (3 ints)")->expected(3);
  sc_inf->add_option("--overlap", inf.params.overlap_fraction, "stage-1 window overlap");
  sc_inf->add_option("--margin", inf.params.roi_margin_vox, "roi margin (voxels)");
  sc_inf->add_option("--patch", patch, "stage-2 patch (3 ints)")->expected(3);
  sc_inf->add_option("--prob-threshold", inf.params.stage2.prob_threshold,
                     "stage-2 binarization threshold");
  sc_inf->add_option("--min-voxels", inf.params.stage2.min_voxels, "stage-2 acceptance size");
  sc_inf->add_option("--max-instances", inf.params.stage2.max_instances, "stage-2 instance cap");
  sc_inf->add_flag("--dump-slices", inf.dump_slices, "write mid-axial/sagittal PGM slices");

  cli::EvalArgs ev;
  auto* sc_ev = app.add_subcommand("eval", "score result bundles against phantom truth");
  sc_ev->add_option("--pred", ev.pred_dirs, "result bundle directories")->required();
  sc_ev->add_option("--truth", ev.truth_cases, "truth case directories (or truth.json paths)")
      ->required();
  sc_ev->add_option("--out", ev.out_dir, "report directory")->required();
  sc_ev->add_option("--radius", ev.id_radius_mm, "identification radius (mm)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*sc_gen) return cli::guarded([&] { cli::cmd_phantom_gen(gen); });
  if (*sc_t1) {
    if (*opt_seed1) t1.seed_override = seed1;
    return cli::guarded([&] { cli::cmd_train_stage1(t1); });
  }
  if (*sc_t2) {
    if (*opt_seed2) t2.seed_override = seed2;
    return cli::guarded([&] { cli::cmd_train_stage2(t2); });
  }
  if (*sc_inf) {
    if (window.size() == 3) inf.params.window = {window[0], window[1], window[2]};
    if (patch.size() == 3) inf.params.stage2.patch_dims = {patch[0], patch[1], patch[2]};
    return cli::guarded([&] { cli::cmd_infer(inf); });
  }
  if (*sc_ev) return cli::guarded([&] { cli::cmd_eval(ev); });
  return 2;
}
