#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "demux/harness.hpp"
#include "demux/metrics.hpp"

namespace h = demux::harness;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON configuration file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed")->required();
  cmd->add_option("--out", c.out, "output directory")->required();
}

std::string fmt(const std::optional<double>& v) { return v ? demux::metrics::format_real(*v) : "-"; }

int cmd_gen(const Common& c) {
  const auto spec = h::read_json(c.config).get<h::GenSpec>();
  const auto manifest = h::gen_dataset(spec, c.seed, c.out);
  std::printf("wrote %zu traces to %s\n", manifest.files.size(), c.out.c_str());
  return 0;
}

int cmd_preprocess(const Common& c) {
  const auto spec = h::read_json(c.config).get<h::PreprocessSpec>();
  const auto report = h::preprocess(spec, c.out);
  std::printf("processed %zu traces, rewrote %zu tensors\n", report.processed, report.rewritten);
  for (const auto& f : report.failures) std::fprintf(stderr, "error: %s: %s\n", f.path.c_str(), f.error.c_str());
  if (!report.failures.empty()) {
    std::fprintf(stderr, "%zu trace(s) failed\n", report.failures.size());
    return 1;
  }
  return 0;
}

int cmd_train(const Common& c) {
  const auto spec = h::read_json(c.config).get<h::ExperimentSpec>();
  const auto outcome = h::run_train(spec, c.seed, c.out);
  std::printf("best epoch %zu, test auc %s p@k %s map@k %s\n", outcome.result.best_epoch,
              demux::metrics::format_real(outcome.test.auc).c_str(), fmt(outcome.test.p_at_k).c_str(),
              fmt(outcome.test.map_at_k).c_str());
  return 0;
}

int cmd_eval(const Common& c) {
  const auto spec = h::read_json(c.config).get<h::EvalSpec>();
  const auto r = h::run_eval(spec, c.out);
  std::printf("auc %s p@k %s map@k %s\n", demux::metrics::format_real(r.auc).c_str(), fmt(r.p_at_k).c_str(),
              fmt(r.map_at_k).c_str());
  return 0;
}

int cmd_ablate(const Common& c) {
  const auto spec = h::read_json(c.config).get<h::AblationSpec>();
  const auto rows = h::run_ablate(spec, c.seed, c.out);
  std::fputs(h::ablation_csv(rows).c_str(), stdout);
  for (const auto& r : rows)
    if (r.status != "ok") return 1;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-tab website fingerprinting workbench"};
  app.require_subcommand(1);
  Common gen, pre, trn, evl, abl;
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset");
  auto* p = app.add_subcommand("preprocess", "window traces into feature tensors");
  auto* t = app.add_subcommand("train", "train one experiment");
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* a = app.add_subcommand("ablate", "run an ablation matrix");
  add_common(g, gen);
  add_common(p, pre);
  add_common(t, trn);
  add_common(e, evl);
  add_common(a, abl);
  CLI11_PARSE(app, argc, argv);
  try {
    if (g->parsed()) return cmd_gen(gen);
    if (p->parsed()) return cmd_preprocess(pre);
    if (t->parsed()) return cmd_train(trn);
    if (e->parsed()) return cmd_eval(evl);
    if (a->parsed()) return cmd_ablate(abl);
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "error: %s\n", ex.what());
    return 1;
  }
  return 1;
}
