// Copyright 2026 The Peak Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <signal.h>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "peak/error.hpp"
#include "peak/service/server.hpp"
#include "peak/service/session.hpp"
#include "peak/util/fs.hpp"

namespace {

using namespace peak;
using nlohmann::json;
namespace fs = std::filesystem;

struct Globals {
  std::string config;
  std::string root;
  std::string backend;
  std::string mock;
  std::string data_dir;
  std::optional<std::size_t> validator_budget;
  std::optional<int> max_retries;
  std::optional<int> warmup;
  std::optional<int> runs;
  std::optional<std::size_t> keep_top;
  std::optional<std::string> flops;
  bool json_out = false;
};

service::SessionConfig make_config(const Globals& g) {
  std::string config = g.config;
  if (config.empty()) {
    if (const char* env = std::getenv("PEAK_CONFIG")) config = env;
  }
  auto c = config.empty() ? service::SessionConfig::from_json(json::object(), fs::current_path())
                          : service::SessionConfig::load(config);
  if (!g.root.empty()) {
    c.workflow_root = g.root;
  } else if (const char* env = std::getenv("PEAK_ROOT")) {
    c.workflow_root = env;
  }
  if (!g.backend.empty()) c.backend = g.backend;
  if (!g.data_dir.empty()) c.data_dir = g.data_dir;
  if (!g.mock.empty()) {
    c.mock_dir = fs::path(g.mock);
    c.live.reset();
  }
  if (g.validator_budget) c.validator_budget = *g.validator_budget;
  if (g.max_retries) c.max_retries = *g.max_retries;
  if (g.warmup) c.policy.warmup_runs = *g.warmup;
  if (g.runs) c.policy.measured_runs = *g.runs;
  if (g.keep_top) c.keep_top = *g.keep_top;
  if (g.flops) c.flops = *g.flops;
  c.check();
  return c;
}

store::Store open_read(const Globals& g) {
  return store::Store::open(make_config(g).workflow_root, store::Store::Mode::read);
}

std::string short_id(const std::string& id) { return id.substr(0, 12); }

std::string tuning_text(const perf::TuningValues& t) {
  std::string s;
  for (const auto& [name, value] : t) s += fmt::format("{}{}={}", s.empty() ? "" : " ", name, value);
  return s.empty() ? "-" : s;
}

void print_report(const perf::PerfReport& r) {
  fmt::print("input key   {}\n", r.input_key.canonical());
  fmt::print("strategy    {}\n", r.strategy);
  fmt::print("points      {} attempted, {} timed, {} invalid, {} failed\n", r.attempted, r.evaluated,
             r.pruned_invalid, r.failed);
  fmt::print("best        {:.6g} ms  {}\n", r.best.mean_time_ms, tuning_text(r.best.tuning));
  if (r.best_gflops) fmt::print("gflops      {:.6g}\n", *r.best_gflops);
  if (r.distribution) {
    fmt::print("repeats     {} ok, {} failed, best min/mean/max {:.6g}/{:.6g}/{:.6g} ms\n", r.distribution->repeats,
               r.distribution->failed, r.distribution->min, r.distribution->mean, r.distribution->max);
  }
  fmt::print("survivors   {}\n", r.top_k.size());
}

void print_attempts(const transform::ApplyOutcome& o) {
  for (const auto& a : o.attempts) {
    std::cerr << fmt::format("attempt pass={} try={} status={}", a.pass, a.attempt, transform::to_string(a.status));
    if (!a.stderr_excerpt.empty()) {
      auto first = a.stderr_excerpt.substr(0, a.stderr_excerpt.find('\n'));
      std::cerr << ": " << first;
    }
    std::cerr << "\n";
  }
}

perf::Strategy strategy_from(bool exhaustive, std::optional<std::size_t> sample, const std::string& tuner,
                             std::optional<std::size_t> budget, int repeats, std::uint64_t seed) {
  const int chosen = (exhaustive ? 1 : 0) + (sample ? 1 : 0) + (tuner.empty() ? 0 : 1);
  if (chosen > 1) throw Error("UsageError", "choose one of --exhaustive, --sample or --tuner");
  if (sample) return perf::Strategy::random(*sample, seed);
  if (!tuner.empty()) {
    if (!budget) throw Error("UsageError", "--tuner needs --budget");
    return perf::Strategy::tuner(tuner, *budget, repeats, seed);
  }
  return perf::Strategy::exhaustive();
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int fail(const std::string& code, const std::string& message) {
  std::cerr << "PEAK_ERROR " << code << " " << one_line(message) << std::endl;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PEAK: transformation workflows for GPU kernels"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Session configuration (JSON); defaults to $PEAK_CONFIG");
  app.add_option("--root", g.root, "Workflow root; defaults to $PEAK_ROOT or the config");
  app.add_option("--backend", g.backend, "Backend id");
  app.add_option("--mock", g.mock, "Answer LLM calls from this fixture directory");
  app.add_option("--data-dir", g.data_dir, "Backends, transformations and fixtures");
  app.add_option("--validator-budget", g.validator_budget, "Execution parameters sampled per validation");
  app.add_option("--max-retries", g.max_retries, "Retries per transformation pass");
  app.add_option("--warmup", g.warmup, "Warmup runs per timing");
  app.add_option("--runs", g.runs, "Measured runs per timing");
  app.add_option("--keep-top", g.keep_top, "Configurations kept per evaluation");
  app.add_option("--flops", g.flops, "FLOP count expression over the input key, e.g. '2 * n * n * n'");
  app.add_flag("--json", g.json_out, "Print JSON");

  std::function<int()> action;

  // init
  auto* init = app.add_subcommand("init", "Commit a seed kernel and capture its reference outputs");
  std::string spec_file, device_file, host_file, macros_file, kernel, label;
  init->add_option("spec", spec_file)->required()->check(CLI::ExistingFile);
  init->add_option("device", device_file)->required()->check(CLI::ExistingFile);
  init->add_option("host", host_file)->required()->check(CLI::ExistingFile);
  init->add_option("macros", macros_file)->check(CLI::ExistingFile);
  init->add_option("--kernel", kernel, "Kernel name; inferred from the device code by default");
  init->add_option("--label", label);
  init->callback([&] {
    action = [&] {
      service::Session s(make_config(g));
      service::InitRequest r{util::read_file(spec_file), util::read_file(device_file), util::read_file(host_file),
                             macros_file.empty() ? std::string() : util::read_file(macros_file), kernel, label};
      const auto c = s.init(r);
      if (g.json_out) fmt::print("{}\n", store::to_json(c).dump(2));
      else fmt::print("seed {}\n", c.id);
      return 0;
    };
  });

  // transform
  auto* tr = app.add_subcommand("transform", "Apply, validate and commit a transformation");
  std::string ckpt, name, note;
  tr->add_option("checkpoint", ckpt)->required();
  tr->add_option("name", name)->required();
  tr->add_option("--note", note);
  tr->callback([&] {
    action = [&] {
      service::Session s(make_config(g));
      const auto r = s.transform(ckpt, name, note);
      print_attempts(r.outcome);
      if (g.json_out) fmt::print("{}\n", to_json(r).dump(2));
      if (!r.checkpoint) {
        return fail("TransformFailed", fmt::format("{} ended with {}; attempts logged in {}", name,
                                                   transform::to_string(r.outcome.status), r.log_file.string()));
      }
      if (!g.json_out) fmt::print("{} {}\n", name, r.checkpoint->id);
      return 0;
    };
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Measure a checkpoint's tuning space");
  bool exhaustive = false;
  std::optional<std::size_t> sample, budget;
  std::string tuner, input_key, csv;
  int repeats = 1;
  std::uint64_t seed = 0;
  ev->add_option("checkpoint", ckpt)->required();
  ev->add_flag("--exhaustive", exhaustive);
  ev->add_option("--sample", sample, "Random sample of N configurations");
  ev->add_option("--tuner", tuner, "Tuner plugin id");
  ev->add_option("--budget", budget, "Tuner iteration budget");
  ev->add_option("--repeats", repeats, "Tuner repeats");
  ev->add_option("--seed", seed);
  ev->add_option("--input-key", input_key, "Selector such as n=64; the last key by default");
  ev->add_option("--csv", csv, "Also write every point to this CSV file");
  ev->callback([&] {
    action = [&] {
      service::Session s(make_config(g));
      service::EvaluateRequest r;
      r.strategy = strategy_from(exhaustive, sample, tuner, budget, repeats, seed);
      r.input_key = input_key;
      const auto report = s.evaluate(ckpt, r);
      if (!csv.empty()) util::write_file(csv, perf::to_csv(report));
      if (g.json_out) fmt::print("{}\n", perf::to_json(report).dump(2));
      else print_report(report);
      return 0;
    };
  });

  // validate
  auto* va = app.add_subcommand("validate", "Validate a checkpoint against its seed's references");
  std::optional<std::size_t> vbudget;
  va->add_option("checkpoint", ckpt)->required();
  va->add_option("--budget", vbudget, "Execution parameters to sample");
  va->callback([&] {
    action = [&] {
      service::Session s(make_config(g));
      const auto report = s.validate(ckpt, vbudget);
      if (g.json_out) {
        fmt::print("{}\n", validation::to_json(report).dump(2));
      } else {
        for (const auto& smp : report.samples) fmt::print("{:<10} {}\n", smp.status, smp.params_label);
        fmt::print("{} ({} sampled)\n", report.pass ? "pass" : "fail", report.sampled);
      }
      return report.pass ? 0 : fail("ValidationFailed", report.reason);
    };
  });

  // log
  auto* lg = app.add_subcommand("log", "Show the checkpoint lineage");
  lg->callback([&] {
    action = [&] {
      const auto s = open_read(g);
      if (g.json_out) {
        json out = json::array();
        for (const auto& c : s.list()) out.push_back(store::to_json(c));
        fmt::print("{}\n", out.dump(2));
      } else {
        fmt::print("{}", service::render_log(s));
      }
      return 0;
    };
  });

  // diff
  auto* df = app.add_subcommand("diff", "Compare two checkpoints");
  std::string a, b;
  df->add_option("a", a)->required();
  df->add_option("b", b)->required();
  df->callback([&] {
    action = [&] {
      const auto s = open_read(g);
      const auto d = s.diff(s.resolve(a), s.resolve(b));
      if (g.json_out) {
        fmt::print("{}\n", store::to_json(d).dump(2));
        return 0;
      }
      for (const auto& [kind, text] : d.regions) fmt::print("{}", text);
      fmt::print("{}{}", d.spec, d.meta);
      if (d.delta.step_speedup) {
        fmt::print("best {:.6g} ms -> {:.6g} ms on {} (speedup {:.4g})\n", *d.delta.a_best_ms, *d.delta.b_best_ms,
                   *d.delta.input_key, *d.delta.step_speedup);
      }
      return 0;
    };
  });

  // restore
  auto* rs = app.add_subcommand("restore", "Write a checkpoint's context bundle to a directory");
  std::string to;
  rs->add_option("checkpoint", ckpt)->required();
  rs->add_option("--to", to)->required();
  rs->callback([&] {
    action = [&] {
      const auto s = open_read(g);
      const auto id = s.resolve(ckpt);
      context::save_bundle(s.restore(id), to);
      fmt::print("{} -> {}\n", short_id(id), to);
      return 0;
    };
  });

  // tag
  auto* tg = app.add_subcommand("tag", "Name a checkpoint");
  std::string ref_name;
  tg->add_option("name", ref_name)->required();
  tg->add_option("checkpoint", ckpt)->required();
  tg->callback([&] {
    action = [&] {
      auto s = store::Store::open(make_config(g).workflow_root, store::Store::Mode::write);
      const auto id = s.resolve(ckpt);
      s.set_ref(ref_name, id);
      fmt::print("{} -> {}\n", ref_name, id);
      return 0;
    };
  });

  // trajectory
  auto* tj = app.add_subcommand("trajectory", "Speedups along a checkpoint's lineage");
  std::optional<double> reference_ms;
  tj->add_option("checkpoint", ckpt)->required();
  tj->add_option("--reference-ms", reference_ms, "Reference implementation time");
  tj->add_option("--input-key", input_key);
  tj->callback([&] {
    action = [&] {
      const auto s = open_read(g);
      const auto id = s.resolve(ckpt);
      std::optional<std::string> key;
      if (!input_key.empty()) key = perf::select_input_key(s.restore(id).spec, input_key).canonical();
      const auto t = s.trajectory(id, reference_ms, key);
      if (g.json_out) {
        fmt::print("{}\n", store::to_json(t).dump(2));
        return 0;
      }
      fmt::print("input key {}\n", t.input_key);
      fmt::print("{:<12}  {:<16}  {:>12}  {:>10}  {:>10}  {:>10}  {:>8}\n", "checkpoint", "transformation", "best ms",
                 "cumulative", "step", "gflops", "% ref");
      for (const auto& st : t.steps) {
        fmt::print("{:<12}  {:<16}  {:>12.6g}  {:>10.4g}  {:>10.4g}  {:>10}  {:>8}\n", short_id(st.id),
                   st.transformation_name.value_or("seed"), st.best_time_ms, st.cumulative_speedup, st.step_speedup,
                   st.best_gflops ? fmt::format("{:.4g}", *st.best_gflops) : "-",
                   st.percent_of_reference ? fmt::format("{:.1f}", *st.percent_of_reference) : "-");
      }
      return 0;
    };
  });

  // reliability
  auto* rl = app.add_subcommand("reliability", "Repeat a transformation and classify the outcomes");
  int trials = 10;
  rl->add_option("checkpoint", ckpt)->required();
  rl->add_option("transformation", name)->required();
  rl->add_option("--trials", trials)->check(CLI::PositiveNumber);
  rl->callback([&] {
    action = [&] {
      service::Session s(make_config(g));
      const auto r = s.reliability(ckpt, name, trials);
      if (g.json_out) {
        fmt::print("{}\n", transform::to_json(r).dump(2));
      } else {
        fmt::print("trials               {}\n", r.trials);
        fmt::print("success rate         {:.3f}\n", r.success_rate);
        fmt::print("compile failures     {:.3f}\n", r.compile_failure_rate);
        fmt::print("reference failures   {:.3f}\n", r.reference_failure_rate);
        fmt::print("extraction failures  {:.3f}\n", r.extraction_failure_rate);
      }
      return 0;
    };
  });

  // run-sequence
  auto* sq = app.add_subcommand("run-sequence", "Apply transformations in order, one per line of a file");
  std::string seq_file, from;
  bool no_evaluate = false;
  sq->add_option("file", seq_file)->required()->check(CLI::ExistingFile);
  sq->add_option("--from", from, "Start checkpoint; the latest seed by default");
  sq->add_flag("--no-evaluate", no_evaluate, "Skip performance reports");
  sq->add_flag("--exhaustive", exhaustive);
  sq->add_option("--sample", sample);
  sq->add_option("--tuner", tuner);
  sq->add_option("--budget", budget);
  sq->add_option("--repeats", repeats);
  sq->add_option("--seed", seed);
  sq->add_option("--input-key", input_key);
  sq->callback([&] {
    action = [&] {
      service::Session s(make_config(g));
      std::optional<service::EvaluateRequest> er;
      if (!no_evaluate) {
        er.emplace();
        er->strategy = strategy_from(exhaustive, sample, tuner, budget, repeats, seed);
        er->input_key = input_key;
      }
      const auto r = s.run_sequence(service::parse_sequence(util::read_file(seq_file)),
                                    from.empty() ? std::nullopt : std::optional<std::string>(from), er);
      if (g.json_out) {
        fmt::print("{}\n", to_json(r).dump(2));
      } else {
        fmt::print("start {}\n", short_id(r.start));
        for (const auto& st : r.steps) {
          fmt::print("{:<16} {:<18} {}\n", st.transformation, transform::to_string(st.status),
                     st.checkpoint ? *st.checkpoint : "-");
        }
      }
      if (!r.completed) {
        const auto& last = r.steps.back();
        return fail("TransformFailed",
                    fmt::format("{} ended with {}", last.transformation, transform::to_string(last.status)));
      }
      return 0;
    };
  });

  // serve
  auto* sv = app.add_subcommand("serve", "Serve the HTTP API over the workflow root");
  std::string host = "127.0.0.1";
  int port = 8080;
  sv->add_option("--host", host);
  sv->add_option("--port", port, "0 picks a free port");
  sv->callback([&] {
    action = [&] {
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);
      service::Server server(make_config(g));
      const int bound = server.start(host, port);
      fmt::print("listening on http://{}:{}\n", host, bound);
      std::fflush(stdout);
      int sig = 0;
      sigwait(&set, &sig);
      server.stop();
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what());
  }
  try {
    return action();
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail("InternalError", e.what());
  }
}
