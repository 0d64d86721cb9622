// Command-line harness: per-model synth/train/eval plus trace comparison.
//
//   ssvi <model> <verb> --seed N [options]
//   ssvi compare a.csv b.csv [--vlb-threshold X] [--out table.csv]
//
// Options may also come from a key=value config file (--config); explicit
// flags override file entries.

#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssvi/harness.hpp"

namespace {

struct FlagStore {
  std::vector<std::pair<std::string, std::string>> entries;
};

void add_run_options(CLI::App* cmd, std::string& config_path, FlagStore& flags) {
  auto track = [&flags](const std::string& key) {
    return [&flags, key](const std::string& value) { flags.entries.emplace_back(key, value); };
  };
  cmd->add_option("--config", config_path, "key=value config file");
  cmd->add_option_function<std::string>("--seed", track("seed"), "random seed (required)");
  cmd->add_option_function<std::string>("--engine", track("engine"), "mcssvi | sdsvi | hmcssvi");
  cmd->add_option_function<std::string>("--schedule", track("schedule"),
                                        "one_over_t[:t0] | constant:<rho>");
  cmd->add_option_function<std::string>("--batch-size", track("batch_size"),
                                        "minibatch size (0 = full batch)");
  cmd->add_option_function<std::string>("--mc-samples", track("mc_samples"),
                                        "Monte Carlo samples per expectation");
  cmd->add_option_function<std::string>("--inner-samples", track("inner_samples"),
                                        "inner samples for the mixed-effects expectations");
  cmd->add_option_function<std::string>("--train", track("train"), "training data path");
  cmd->add_option_function<std::string>("--test", track("test"), "test data path");
  cmd->add_option_function<std::string>("--model-in", track("model_in"), "model file to load");
  cmd->add_option_function<std::string>("--model-out", track("model_out"), "model file to write");
  cmd->add_option_function<std::string>("--out", track("out"), "trace / output path");
  cmd->add_option_function<std::string>("--epochs", track("epochs"), "training epochs");
  cmd->add_option_function<std::string>("--eval-every", track("eval_every"),
                                        "epochs between evaluations");
  cmd->add_option_function<std::string>("--likelihood", track("likelihood"),
                                        "gaussian:<var> | logistic | poisson:<lmax> | ordinal:<L>");
  cmd->add_option_function<std::string>("--timing", track("timing"),
                                        "work (deterministic) | wall");
  cmd->add_option_function<std::string>("--dim", track("dim"), "feature dimension (synth)");
  cmd->add_option_function<std::string>("--n", track("n"), "example count (synth)");
  cmd->add_option_function<std::string>("--rows", track("rows"), "matrix rows (pmf synth)");
  cmd->add_option_function<std::string>("--cols", track("cols"), "matrix cols (pmf synth)");
  cmd->add_option_function<std::string>("--latent", track("latent"), "latent dimension (pmf)");
  cmd->add_option_function<std::string>("--density", track("density"),
                                        "observed fraction (pmf synth)");
  cmd->add_option_function<std::string>("--topics", track("topics"), "topic count (ctm)");
  cmd->add_option_function<std::string>("--vocab", track("vocab"), "vocabulary size (ctm synth)");
  cmd->add_option_function<std::string>("--docs", track("docs"), "document count (ctm synth)");
  cmd->add_option_function<std::string>("--words-per-doc", track("words_per_doc"),
                                        "words per document (ctm synth)");
  cmd->add_option_function<std::string>("--approx", track("approx"),
                                        "ctm bound: optimal | simple | both");
  cmd->add_option_function<std::string>("--cov-mode", track("cov_mode"),
                                        "ctm covariances: full | diag");
  cmd->add_option_function<std::string>("--nll-scheme", track("nll_scheme"),
                                        "prior | posterior | posterior+0.1I | posterior+1I | "
                                        "point-split");
  cmd->add_option_function<std::string>("--nll-samples", track("nll_samples"),
                                        "importance samples per batch");
  cmd->add_option_function<std::string>("--nll-batches", track("nll_batches"),
                                        "importance sample batches");
  cmd->add_option_function<std::string>("--nll-docs", track("nll_docs"),
                                        "test documents used for the NLL column");
  cmd->add_option_function<std::string>("--variant", track("variant"),
                                        "sgp solver: subopt | opt | v1 | v2");
  cmd->add_option_function<std::string>("--inducing", track("inducing"),
                                        "inducing point count (sgp)");
  cmd->add_option_function<std::string>("--grid-search", track("grid_search"),
                                        "sgp kernel grid search: 0 | 1");
  cmd->add_option_function<std::string>("--tau-sq", track("tau_sq"),
                                        "Rayleigh prior scale-squared (gme)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic variational inference toolkit"};
  app.require_subcommand(1);

  struct PendingRun {
    ssvi::RunConfig cfg;
    std::string config_path;
    FlagStore flags;
  };
  std::vector<std::unique_ptr<PendingRun>> pending;

  for (const std::string model : {"glm", "gme", "sgp", "pmf", "ctm"}) {
    auto* model_cmd = app.add_subcommand(model, model + std::string(" model"));
    model_cmd->require_subcommand(1);
    for (const std::string verb : {"synth", "train", "eval"}) {
      auto* verb_cmd = model_cmd->add_subcommand(verb, verb + std::string(" subcommand"));
      auto run = std::make_unique<PendingRun>();
      run->cfg.model = model;
      run->cfg.verb = verb;
      add_run_options(verb_cmd, run->config_path, run->flags);
      PendingRun* ptr = run.get();
      verb_cmd->callback([ptr]() {
        try {
          if (!ptr->config_path.empty()) ssvi::load_config_file(ptr->cfg, ptr->config_path);
          for (const auto& [key, value] : ptr->flags.entries) {
            ssvi::apply_config_entry(ptr->cfg, key, value);  // flags win
          }
        } catch (const std::exception& e) {
          std::cerr << "{\"error\":\"" << e.what() << "\",\"code\":2}" << std::endl;
          std::exit(2);
        }
        std::exit(ssvi::run(ptr->cfg));
      });
      pending.push_back(std::move(run));
    }
  }

  auto* cmp = app.add_subcommand("compare", "summarize >= 2 trace files");
  std::vector<std::string> trace_paths;
  std::string cmp_out;
  double vlb_threshold = 0.0, nll_threshold = 0.0, err_threshold = 0.0;
  bool has_vlb = false, has_nll = false, has_err = false;
  cmp->add_option("traces", trace_paths, "trace CSV files")->required()->expected(1, -1);
  cmp->add_option("--out", cmp_out, "write the summary table as CSV");
  cmp->add_option("--vlb-threshold", vlb_threshold, "time to reach this neg_vlb_mc")
      ->each([&](const std::string&) { has_vlb = true; });
  cmp->add_option("--nll-threshold", nll_threshold, "time to reach this test_nll")
      ->each([&](const std::string&) { has_nll = true; });
  cmp->add_option("--err-threshold", err_threshold, "time to reach this error metric")
      ->each([&](const std::string&) { has_err = true; });
  cmp->callback([&]() {
    try {
      std::vector<ssvi::MetricsTrace> traces;
      for (const auto& p : trace_paths) traces.push_back(ssvi::MetricsTrace::read(p));
      ssvi::CompareThresholds th;
      th.has_vlb = has_vlb;
      th.vlb = vlb_threshold;
      th.has_nll = has_nll;
      th.nll = nll_threshold;
      th.has_error = has_err;
      th.error = err_threshold;
      const auto rows = ssvi::compare_traces(trace_paths, traces, th);
      std::cout << ssvi::compare_table_text(rows);
      if (!cmp_out.empty()) {
        std::ofstream out(cmp_out);
        out << ssvi::compare_table_csv(rows);
      }
      std::exit(0);
    } catch (const std::exception& e) {
      std::cerr << "{\"error\":\"" << e.what() << "\",\"code\":2}" << std::endl;
      std::exit(2);
    }
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}
