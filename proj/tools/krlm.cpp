// SPDX-License-Identifier: Apache-2.0
//
// krlm: command-line entry point.
//
// Exit codes: 0 success, 1 internal error, 2 usage, 3 data error, 4 numeric failure.

#include "krlm/commands.hpp"
#include "krlm/config.hpp"
#include "krlm/dataset.hpp"
#include "krlm/gradcheck.hpp"
#include "krlm/trainer.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>

namespace {

using namespace krlm;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;
};

void add_config_flags(CLI::App* app, ConfigFlags& flags) {
  app->add_option("--config", flags.file, "Flat key/value config file");
  for (const std::string& key : config_keys()) {
    app->add_option("--" + key, flags.values[key], "Config key " + key)->take_last();
  }
}

RunConfig resolve(const ConfigFlags& flags, CLI::App* app) {
  std::vector<std::pair<std::string, std::string>> given;
  for (const auto& [key, value] : flags.values) {
    if (app->count("--" + key) > 0) given.emplace_back(key, value);
  }
  std::vector<std::string> warnings;
  RunConfig cfg = parse_config(flags.file, krlm_environment(), given, &warnings);
  for (const std::string& w : warnings) std::cerr << "warning: " << w << '\n';
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KRLM: knowledge representation learning on a frozen decoder"};
  app.require_subcommand(1);

  ConfigFlags prepare_flags, pretrain_flags, finetune_flags, e2e_flags, eval_flags, inspect_flags;

  auto* synth = app.add_subcommand("synth", "Write a generated inductive dataset");
  std::string synth_profile = "fb-v1";
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--profile", synth_profile, "fb-v1 or toy")->check(CLI::IsMember({"fb-v1", "toy"}));
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Dataset directory")->required();

  auto* grail = app.add_subcommand("import-grail", "Convert a GraIL-layout split into a dataset directory");
  std::string grail_train, grail_test, grail_name, grail_out;
  grail->add_option("--train-dir", grail_train, "Directory with train.txt and valid.txt")->required();
  grail->add_option("--test-dir", grail_test, "Directory with train.txt and test.txt")->required();
  grail->add_option("--name", grail_name, "Dataset name")->required();
  grail->add_option("--out", grail_out, "Dataset directory")->required();

  auto* prepare = app.add_subcommand("prepare", "Validate, augment and cache a dataset");
  add_config_flags(prepare, prepare_flags);
  auto* pretrain = app.add_subcommand("pretrain", "Pre-train on a prepared dataset");
  add_config_flags(pretrain, pretrain_flags);
  auto* finetune = app.add_subcommand("finetune", "Fine-tune a checkpoint on a prepared dataset");
  add_config_flags(finetune, finetune_flags);
  auto* e2e = app.add_subcommand("train-e2e", "Train from initialization on a prepared dataset");
  add_config_flags(e2e, e2e_flags);
  auto* evaluate = app.add_subcommand("evaluate", "Rank the test split with a checkpoint");
  add_config_flags(evaluate, eval_flags);

  auto* inspect = app.add_subcommand("inspect", "Export the attention trace of one test query");
  add_config_flags(inspect, inspect_flags);
  std::optional<int> inspect_head, inspect_rel, inspect_answer, inspect_index;
  bool inspect_inverse = false;
  inspect->add_option("--head", inspect_head, "Head entity id in the test graph");
  inspect->add_option("--relation", inspect_rel, "Relation id (inverse ids are J..2J-1)");
  inspect->add_option("--answer", inspect_answer, "Ground-truth entity id");
  inspect->add_option("--test-index", inspect_index, "Use test triplet k instead of --head/--relation");
  inspect->add_flag("--inverse", inspect_inverse, "With --test-index: the (t, r^-1, ?) direction");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::uint64_t gradcheck_seed = 7;
  double gradcheck_tol = 1e-4;
  gradcheck->add_option("--seed", gradcheck_seed, "Instance seed");
  gradcheck->add_option("--tolerance", gradcheck_tol, "Maximum relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      const SynthProfile profile = synth_profile == "toy" ? SynthProfile::toy() : SynthProfile::fb_v1();
      write_dataset(synth_out, synthesize(profile, synth_seed));
      std::cerr << fmt::format("wrote {} to {}\n", profile.name, synth_out);
    } else if (grail->parsed()) {
      write_dataset(grail_out, import_grail(grail_train, grail_test, grail_name));
      std::cerr << fmt::format("wrote {} to {}\n", grail_name, grail_out);
    } else if (prepare->parsed()) {
      run_prepare(resolve(prepare_flags, prepare), std::cerr);
    } else if (pretrain->parsed()) {
      run_train(resolve(pretrain_flags, pretrain), TrainMode::pretrain, std::cerr);
    } else if (finetune->parsed()) {
      run_train(resolve(finetune_flags, finetune), TrainMode::finetune, std::cerr);
    } else if (e2e->parsed()) {
      run_train(resolve(e2e_flags, e2e), TrainMode::e2e, std::cerr);
    } else if (evaluate->parsed()) {
      std::cout << run_evaluate(resolve(eval_flags, evaluate), std::cerr).dump(2) << '\n';
    } else if (inspect->parsed()) {
      const RunConfig cfg = resolve(inspect_flags, inspect);
      QueryTriplet q;
      if (inspect_index) {
        const Dataset ds = load_dataset(nlohmann::json::parse(std::ifstream(cfg.work / "prepare.json")).at("data").get<std::string>());
        if (*inspect_index < 0 || static_cast<std::size_t>(*inspect_index) >= ds.test.size()) {
          throw UsageError(fmt::format("--test-index {} outside [0, {})", *inspect_index, ds.test.size()));
        }
        const Triplet& t = ds.test[static_cast<std::size_t>(*inspect_index)];
        const int j = ds.test_graph.base_relation_count();
        q = inspect_inverse ? QueryTriplet{t.tail, t.rel + j, t.head} : QueryTriplet{t.head, t.rel, t.tail};
      } else {
        if (!inspect_head || !inspect_rel) throw UsageError("inspect needs --test-index or both --head and --relation");
        q = QueryTriplet{*inspect_head, *inspect_rel, inspect_answer};
      }
      std::cout << run_inspect(cfg, q, std::cerr).dump(2) << '\n';
    } else if (gradcheck->parsed()) {
      bool ok = true;
      for (const GradcheckCase& c : run_gradcheck_suite(gradcheck_seed)) {
        const bool pass = c.stats.max_rel_error < gradcheck_tol;
        ok = ok && pass;
        nlohmann::json j = to_json(c);
        j["pass"] = pass;
        std::cout << j.dump() << '\n';
      }
      return ok ? 0 : kExitNumeric;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ContractError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
