// Command-line front end: interactive REPL, script runner, HTTP server and
// world checks.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "wm/server.hpp"
#include "wm/session.hpp"

namespace {

constexpr const char* kReplUsage =
    "usage: C: <condition>   Q: <query>   D: <definition>   (...) code committed directly   :quit";

void print_entry(std::ostream& out, const wm::UtteranceEntry& e) {
  out << e.code << "\n";
  if (e.result.kind == wm::EntryResult::Kind::Posterior) out << wm::format_summary(e.result.posterior);
  if (e.result.kind == wm::EntryResult::Kind::DefinitionInstalled) {
    out << "defined:";
    for (const auto& n : e.result.defined) out << " " << n;
    out << "\n";
  }
}

void print_rejected(std::ostream& out, const wm::NoValidCandidate& e) {
  out << "error: no valid translation\n";
  for (const auto& c : e.rejected()) out << "  " << wm::one_line(c.code.empty() ? c.raw : c.code) << "  [" << c.reason << "]\n";
}

/// One REPL line. Returns false on :quit.
bool repl_line(wm::DialogueSession& session, const std::string& raw, std::ostream& out) {
  const auto line = wm::trim(raw);
  if (line.empty()) return true;
  if (line == ":quit" || line == ":q") return false;
  wm::UtteranceRequest req;
  if (line.front() == '(') {
    req.code = line;
  } else if (line.size() >= 2 && line[1] == ':' && (line[0] == 'C' || line[0] == 'Q' || line[0] == 'D')) {
    req.tag = line[0] == 'C' ? wm::Tag::Condition : line[0] == 'Q' ? wm::Tag::Query : wm::Tag::Define;
    const auto body = wm::trim(std::string_view(line).substr(2));
    if (!body.empty() && body.front() == '(') {
      req.code = body;
      const bool wrapped = body.starts_with("(query") || body.starts_with("(condition") || body.starts_with("(define");
      if (!wrapped && *req.tag != wm::Tag::Define)
        req.code = (*req.tag == wm::Tag::Query ? "(query " : "(condition ") + body + ")";
    } else {
      req.text = body;
    }
  } else {
    out << kReplUsage << "\n";
    return true;
  }
  try {
    print_entry(out, session.post(req));
  } catch (const wm::NoValidCandidate& e) {
    print_rejected(out, e);
  } catch (const std::exception& e) {
    out << "error: " << e.what() << "\n";
  }
  return true;
}

wm::SamplingBudget budget_from(std::size_t target, std::size_t attempts, std::size_t chains) {
  wm::SamplingBudget b{target, attempts, chains};
  b.validate();
  return b;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic world-model dialogue tool"};
  app.require_subcommand(1);

  std::size_t target = 1000, attempts = 1'000'000, chains = 0;
  auto add_budget = [&](CLI::App* c) {
    c->add_option("--samples", target, "Accepted samples per query")->capture_default_str();
    c->add_option("--max-attempts", attempts, "Attempt budget per query")->capture_default_str();
    c->add_option("--chains", chains, "Worker threads (0 = one per core)")->capture_default_str();
  };
  std::string backend = wm::backend_kind_from_env();

  auto* repl = app.add_subcommand("repl", "Interactive dialogue over a world model");
  std::string repl_world;
  std::uint64_t repl_seed = 0;
  repl->add_option("world", repl_world, "World id")->required();
  repl->add_option("--seed", repl_seed, "Session seed")->capture_default_str();
  repl->add_option("--backend", backend, "mock or http")->capture_default_str();
  add_budget(repl);

  auto* run = app.add_subcommand("run", "Run a dialogue script and write the session record as JSON");
  std::string script_path, out_path;
  run->add_option("script", script_path, "Dialogue script")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--out", out_path, "Output JSON path (default: stdout)");
  run->add_option("--backend", backend, "mock or http")->capture_default_str();
  add_budget(run);

  auto* srv = app.add_subcommand("serve", "Serve the HTTP API");
  wm::ServiceConfig service;
  std::string static_dir;
  srv->add_option("--host", service.host)->capture_default_str();
  srv->add_option("--port", service.port)->capture_default_str();
  srv->add_option("--data-dir", service.data_dir, "Transcript directory");
  srv->add_option("--static", static_dir, "Directory of static client files");
  srv->add_option("--renders", service.render_samples, "Sample worlds rendered per condition")->capture_default_str();
  srv->add_option("--backend", backend, "mock or http")->capture_default_str();
  add_budget(srv);

  auto* worlds = app.add_subcommand("worlds", "List bundled world models");

  auto* check = app.add_subcommand("check", "Sample each world and check its prior statistics");
  std::vector<std::string> check_worlds;
  std::size_t check_n = 1000;
  std::uint64_t check_seed = 1;
  check->add_option("worlds", check_worlds, "World ids (default: all)");
  check->add_option("-n", check_n, "Samples per world")->capture_default_str();
  check->add_option("--seed", check_seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*worlds) {
      for (const auto& id : wm::list_worlds()) {
        const auto w = wm::load_world(id);
        std::cout << id << "\t" << wm::render_kind_name(w->render_kind) << "\t" << w->description << "\n";
      }
      return 0;
    }

    if (*check) {
      if (check_worlds.empty()) check_worlds = wm::list_worlds();
      bool ok = true;
      for (const auto& id : check_worlds) {
        for (const auto& c : wm::check_world_statistics(*wm::load_world(id), check_n, check_seed)) {
          std::cout << (c.pass ? "ok   " : "FAIL ") << c.world << "  " << c.name << "  observed " << c.observed
                    << "  expected " << c.expected << " +/- " << c.tolerance << "\n";
          ok = ok && c.pass;
        }
      }
      return ok ? 0 : 1;
    }

    wm::ServiceConfig config = service;
    config.backend = backend;
    config.budget = budget_from(target, attempts, chains);

    if (*run) {
      std::ifstream f(script_path);
      wm::ojson script;
      try {
        script = wm::ojson::parse(f);
      } catch (const std::exception& e) {
        std::cerr << "error: " << script_path << ": " << e.what() << "\n";
        return 2;
      }
      auto result = wm::run_script(script, config);
      if (result.exit_code == 2) {
        std::cerr << "error: " << result.error << "\n";
        return 2;
      }
      const auto text = wm::to_json(result.record).dump(2) + "\n";
      if (out_path.empty()) {
        std::cout << text;
      } else {
        std::ofstream o(out_path, std::ios::binary | std::ios::trunc);
        o << text;
      }
      if (result.exit_code != 0) std::cerr << "error: " << result.error << "\n";
      return result.exit_code;
    }

    if (*srv) {
      wm::SessionManager manager(config);
      std::cerr << "listening on http://" << config.host << ":" << config.port << "\n";
      return wm::serve(manager, static_dir) ? 0 : 1;
    }

    if (*repl) {
      const auto world = wm::load_world(repl_world);
      wm::SessionRecord rec;
      rec.id = "repl";
      rec.world = world->id;
      rec.created_at = wm::utc_now();
      rec.seed = repl_seed;
      rec.budget = config.budget;
      wm::DialogueSession session(rec, world, wm::make_backend(backend, *world), config);
      std::cout << "world " << world->id << ", seed " << repl_seed << "\n" << kReplUsage << "\n";
      std::string line;
      while (std::cout << "> " << std::flush, std::getline(std::cin, line))
        if (!repl_line(session, line, std::cout)) break;
      return 0;
    }
  } catch (const wm::UnknownWorld& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
