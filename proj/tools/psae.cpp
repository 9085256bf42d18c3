// psae: preprocess / augment / train / score / eval.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "psae/commands.hpp"
#include "psae/config.hpp"

namespace {

template <typename V>
CLI::Option* bind_optional(CLI::App* app, const std::string& flag, std::optional<V>& dst, const std::string& help) {
  return app->add_option_function<V>(flag, [&dst](const V& v) { dst = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked pitch-sequence model: train on machine-composed MIDI, score provenance"};
  app.require_subcommand(1);

  std::string in_dir, out_dir, corpus_dir, config_path, checkpoint, midi_path, manifest;
  bool per_note = false;
  psae::ConfigOverrides ov;

  auto* pre = app.add_subcommand("preprocess", "MIDI directory -> token corpus");
  pre->add_option("--in", in_dir, "directory of .mid files")->required();
  pre->add_option("--out", out_dir, "output corpus directory")->required();
  bind_optional(pre, "--seed", ov.seed, "seed for triplet resolution (default 0)");

  auto* aug = app.add_subcommand("augment", "transpose and truncate a token corpus");
  aug->add_option("--in", in_dir, "input corpus directory")->required();
  aug->add_option("--out", out_dir, "output corpus directory")->required();
  bind_optional(aug, "--transpositions", ov.transpositions_per_seq, "variants per sequence (31)");
  bind_optional(aug, "--truncated", ov.truncated_per_seq, "variants also head-truncated (16)");
  bind_optional(aug, "--trunc-min", ov.truncation_min, "smallest truncation (1)");
  bind_optional(aug, "--trunc-max", ov.truncation_max, "largest truncation (100)");
  bind_optional(aug, "--seed", ov.seed, "seed")->required();
  aug->add_option("--config", config_path, "JSON config file");

  auto* tr = app.add_subcommand("train", "train the masked model");
  tr->add_option("--corpus", corpus_dir, "token corpus directory")->required();
  tr->add_option("--config", config_path, "JSON config file");
  tr->add_option("--out", checkpoint, "checkpoint path")->required();
  bind_optional(tr, "--epochs", ov.epochs, "epochs (required here or in the config)");
  bind_optional(tr, "--seed", ov.seed, "seed");
  bind_optional(tr, "--batch-size", ov.batch_size, "batch size (64)");
  bind_optional(tr, "--lr", ov.learning_rate, "learning rate (1e-3)");
  bind_optional(tr, "--flood-b", ov.flood_b, "flood level b (0.05)");
  bind_optional(tr, "--mask-rate", ov.mask_rate, "masked fraction (0.15)");
  bind_optional(tr, "--weight-decay", ov.weight_decay, "AdamW decoupled decay (0.01)");
  bind_optional(tr, "--masking", ov.masking, "replace | bert");

  auto* sc = app.add_subcommand("score", "AI / human probability of one MIDI clip");
  sc->add_option("--model", checkpoint, "checkpoint")->required();
  sc->add_option("--midi", midi_path, "MIDI file")->required();
  sc->add_flag("--per-note", per_note, "mask whole sustained notes instead of single steps");

  auto* ev = app.add_subcommand("eval", "AUC report over a labelled manifest");
  ev->add_option("--model", checkpoint, "checkpoint")->required();
  ev->add_option("--manifest", manifest, "CSV: path,label,style,algorithm,published")->required();
  ev->add_option("--out", out_dir, "report directory")->required();
  ev->add_flag("--per-note", per_note, "mask whole sustained notes instead of single steps");

  CLI11_PARSE(app, argc, argv);

  try {
    nlohmann::json file_json;
    if (!config_path.empty()) file_json = psae::load_config_json(config_path);
    const auto cfg = psae::resolve_config(file_json, ov);

    if (pre->parsed()) {
      const auto s = psae::commands::preprocess(in_dir, out_dir, cfg.seed);
      std::cout << s.to_text();
      if (!s.failures.empty()) std::cerr << "skipped " << s.failures.size() << " file(s)\n";
    } else if (aug->parsed()) {
      const auto s = psae::commands::augment(in_dir, out_dir, cfg.augment);
      std::cout << "inputs=" << s.inputs << "\toutputs=" << s.outputs << "\n";
    } else if (tr->parsed()) {
      psae::commands::train(corpus_dir, cfg, checkpoint, &std::cout);
      std::cout << "params=" << psae::param_count(cfg.model) << "\tcheckpoint=" << checkpoint << "\n";
    } else if (sc->parsed()) {
      std::cout << psae::commands::format_score_line(psae::commands::score(checkpoint, midi_path, per_note)) << "\n";
    } else if (ev->parsed()) {
      const auto r = psae::commands::eval(checkpoint, manifest, out_dir, per_note);
      std::cout << psae::report_to_table(r);
    }
  } catch (const psae::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
