// psrp: split, pretrain, finetune, evaluate, gradcheck, export-embeddings.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "psrp/cli.hpp"

namespace fs = std::filesystem;
using namespace psrp;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string output;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
    app->add_option("-s,--set", overrides, "override one setting, key=value (repeatable)");
    app->add_option("--seed", seed, "global seed (default 0), recorded in every output");
    app->add_option("-o,--output", output, "output directory (relative paths honour $PSRP_OUTPUT_ROOT)");
  }

  cli::RunConfig load(std::vector<std::string> extra = {}) const {
    auto all = overrides;
    if (seed) all.push_back("seed=" + std::to_string(*seed));
    if (!output.empty()) all.push_back("output.dir=" + output);
    all.insert(all.end(), extra.begin(), extra.end());
    return cli::load_run_config(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file), all);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subsequence-reordering pretraining for protein encoders and CPI evaluation"};
  app.require_subcommand(1);

  Common split_opts, pre_opts, ft_opts, eval_opts, export_opts;

  auto* split = app.add_subcommand("split", "four-scenario split of an interaction TSV");
  split_opts.attach(split);
  std::string split_dataset;
  split->add_option("dataset", split_dataset, "interaction TSV (smiles, sequence, label)");

  auto* pretrain = app.add_subcommand("pretrain", "self-supervised reordering pretraining");
  pre_opts.attach(pretrain);
  std::optional<int> epochs;
  pretrain->add_option("--epochs", epochs, "training epochs");

  auto* finetune = app.add_subcommand("finetune", "train the CPI head on a frozen encoder");
  ft_opts.attach(finetune);
  std::string ft_checkpoint;
  bool random_init = false;
  finetune->add_option("--checkpoint", ft_checkpoint, "pretrained encoder checkpoint");
  finetune->add_flag("--random-init", random_init, "use a randomly initialised frozen encoder instead");

  auto* evaluate = app.add_subcommand("evaluate", "aggregate per-seed prediction files into a report");
  eval_opts.attach(evaluate);
  std::vector<std::string> prediction_files;
  evaluate->add_option("predictions", prediction_files, "predictions.csv, one per seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  GradcheckOptions gc;
  gradcheck->add_option("--seed", gc.seed, "seed for the random instances");
  gradcheck->add_option("--sinkhorn-tol", gc.sinkhorn_tolerance, "tolerance for Sinkhorn checks");
  gradcheck->add_option("--model-tol", gc.model_tolerance, "tolerance for full-model checks");
  gradcheck->add_option("--perturb", gc.perturb)->group("");  // test hook

  auto* export_emb = app.add_subcommand("export-embeddings", "write one embedding row per protein");
  export_opts.attach(export_emb);
  std::string ex_checkpoint, ex_proteins, ex_out;
  export_emb->add_option("--checkpoint", ex_checkpoint, "encoder checkpoint")->required();
  export_emb->add_option("--proteins", ex_proteins, "protein list (id<TAB>sequence per line)")->required();
  export_emb->add_option("--out", ex_out, "output file")->required();

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string synth_kind = "cpi", synth_out;
  std::size_t synth_count = 2000;
  std::uint64_t synth_seed = 0;
  int synth_lmax = kDefaultMaxProteinLength;
  synth->add_option("--kind", synth_kind, "motif (protein list) or cpi (interaction TSV)");
  synth->add_option("--count", synth_count, "sequences (motif) or pairs (cpi)");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--l-max", synth_lmax, "maximum protein length");
  synth->add_option("--out", synth_out, "output file")->required();

  auto* vocab = app.add_subcommand("vocab", "print the residue vocabulary table");

  CLI11_PARSE(app, argc, argv);

  try {
    if (split->parsed()) {
      std::vector<std::string> extra;
      if (!split_dataset.empty()) extra.push_back("corpus.dataset=" + split_dataset);
      const auto cfg = split_opts.load(extra);
      const auto out = cli::cmd_split(cfg);
      std::cout << render_kv_document(out.manifest);
    } else if (pretrain->parsed()) {
      std::vector<std::string> extra;
      if (epochs) extra.push_back("pretrain.epochs=" + std::to_string(*epochs));
      const auto cfg = pre_opts.load(extra);
      const auto r = cli::cmd_pretrain(cfg);
      std::cout << "seed=" << cfg.seed << " epochs=" << r.validation_accuracy.size()
                << " best_epoch=" << r.best_epoch << " best_validation_accuracy="
                << r.validation_accuracy[static_cast<std::size_t>(r.best_epoch - 1)] << " skipped=" << r.skipped
                << " output=" << (cfg.output_root() / "pretrain").string() << '\n';
    } else if (finetune->parsed()) {
      const auto cfg = ft_opts.load();
      const auto ckpt = ft_checkpoint.empty() ? std::nullopt : std::optional<fs::path>(ft_checkpoint);
      const auto r = cli::cmd_finetune(cfg, ckpt, random_init);
      std::cout << "seed=" << cfg.seed << " best_epoch=" << r.run.best_epoch << " predictions=" << r.prediction_rows
                << " output=" << (cfg.output_root() / "finetune").string() << '\n';
    } else if (evaluate->parsed()) {
      const auto cfg = eval_opts.load();
      std::vector<fs::path> files(prediction_files.begin(), prediction_files.end());
      const auto report = cli::cmd_evaluate(cfg, files);
      std::cout << report.to_json().dump(2) << '\n';
    } else if (gradcheck->parsed()) {
      const auto report = run_gradcheck(gc);
      report.print(std::cout);
      std::cout << (report.passed() ? "gradcheck: PASS" : "gradcheck: FAIL") << " (seed=" << gc.seed << ")\n";
      return report.passed() ? 0 : 1;
    } else if (export_emb->parsed()) {
      const auto cfg = export_opts.load();
      const auto r = cli::cmd_export_embeddings(cfg, ex_checkpoint, ex_proteins, ex_out);
      for (const auto& id : r.skipped) std::cerr << "skipped " << id << ": shorter than n=" << cfg.racut.n << '\n';
      std::cout << "seed=" << cfg.seed << " written=" << r.written << " skipped=" << r.skipped.size() << '\n';
    } else if (synth->parsed()) {
      cli::cmd_synth(synth_kind, synth_out, synth_count, synth_seed, synth_lmax);
    } else if (vocab->parsed()) {
      ResidueVocabulary().write_table(std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "psrp: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
