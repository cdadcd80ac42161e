// mareval — multimodal analogical-reasoning evaluation harness.
//
// Subcommands: validate, prompts, ftdata, images, run, report.
// Exit codes: 0 success, 1 validation failure, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mareval/mareval.hpp"

namespace fs = std::filesystem;
using namespace mareval;

namespace {

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::parse:
    case ErrorKind::duplicate_id:
    case ErrorKind::dangling_reference:
    case ErrorKind::unknown_id:
    case ErrorKind::invalid_argument:
    case ErrorKind::config:
    case ErrorKind::empty_input:
    case ErrorKind::missing_image:
      return 1;
    default:
      return 2;
  }
}

std::string rel_to(const fs::path& base, const std::string& path) {
  std::error_code ec;
  fs::path rel = fs::relative(path, base, ec);
  if (ec || rel.empty()) return path;
  std::string s = rel.generic_string();
  return s.rfind("..", 0) == 0 ? path : s;
}

std::string render_image_rel(const ImageRef& ref, const fs::path& base) {
  ImageRef out;
  for (const auto& p : ref.parts) out.parts.push_back(rel_to(base, p));
  return out.render();
}

struct ValidateArgs {
  std::string kg_dir;
  std::string questions;
  bool check_images = true;
  int max_diagnostics = 10;
};

int cmd_validate_main(const ValidateArgs& a) {
  std::vector<std::string> warnings;
  KnowledgeGraph kg = KnowledgeGraph::load(a.kg_dir, &warnings);
  std::cout << kg.entities().size() << " entities, " << kg.relations().size()
            << " relations, " << kg.triplets().size() << " triplets\n";
  std::vector<std::string> diags = kg.validate(a.check_images);
  if (!a.questions.empty()) {
    auto questions = load_questions(a.questions, kg, &warnings);
    std::cout << questions.size() << " questions\n";
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  if (!diags.empty()) {
    int shown = 0;
    for (const auto& d : diags) {
      if (shown++ >= a.max_diagnostics) {
        std::cerr << "... " << (diags.size() - std::size_t(a.max_diagnostics))
                  << " more\n";
        break;
      }
      std::cerr << "invalid: " << d << "\n";
    }
    return 1;
  }
  std::cout << "ok\n";
  return 0;
}

struct PromptsArgs {
  std::string kg_dir;
  std::string questions;
  std::string out_dir;
  std::string templates_path;
  std::string mode = "mc";
  std::string subtask = "all";
  std::uint64_t seed = 0;
  int option_count = 10;
  double tf_rate = 0.5;
  bool no_tr = false;
  bool no_te = false;
};

int cmd_prompts_main(const PromptsArgs& a) {
  KnowledgeGraph kg = KnowledgeGraph::load(a.kg_dir);
  std::vector<AnalogyQuestion> questions = load_questions(a.questions, kg);
  if (a.subtask != "all") {
    std::erase_if(questions, [&](const AnalogyQuestion& q) {
      return q.modality.code() != a.subtask;
    });
  }
  std::sort(questions.begin(), questions.end(),
            [](const auto& x, const auto& y) { return x.id < y.id; });
  PromptMode mode = parse_mode(a.mode);
  TemplateSet templates = a.templates_path.empty()
                              ? TemplateSet()
                              : TemplateSet::from_file(a.templates_path);
  AblationFlags flags{!a.no_tr, !a.no_te};
  fs::create_directories(a.out_dir);
  const fs::path base = kg.base_dir();

  std::string unified_txt, step2_txt, recon_txt;
  for (const auto& q : questions) {
    UnifiedPrompt up = build_unified(q, kg, flags);
    unified_txt += "=== " + q.id + " [" + q.modality.code() + "]\n";
    unified_txt += up.token_text + "\n";
    for (const auto& img : up.image_slots)
      unified_txt += "image: " + rel_to(base, img) + "\n";
    unified_txt += "\n";

    std::vector<std::string> options;
    const std::vector<std::string>* options_ptr = nullptr;
    std::string candidate;
    const std::string* candidate_ptr = nullptr;
    if (mode == PromptMode::multiple_choice) {
      options = q.options ? *q.options : sample_options(q, kg, a.option_count, a.seed);
      options_ptr = &options;
    } else if (mode == PromptMode::true_false) {
      candidate = sample_tf_candidate(q, kg, a.seed, a.tf_rate);
      candidate_ptr = &candidate;
    }
    DialoguePrompt d = build_step2(q, kg, mode, options_ptr, candidate_ptr, templates);
    step2_txt += "=== " + q.id + " [" + q.modality.code() + "] mode=" +
                 mode_name(mode) + "\n";
    for (const auto& turn : d.turns) {
      step2_txt += std::string("[") + role_name(turn.role) + "]";
      if (!turn.image.empty())
        step2_txt += " image: " + render_image_rel(turn.image, base);
      step2_txt += "\n" + turn.text + "\n";
    }
    step2_txt += "\n";

    recon_txt += "=== " + q.id + " [" + q.modality.code() + "]\n";
    for (const auto& p : build_reconstruction_prompts(q, kg, templates)) {
      recon_txt += "--- " + p.meta.at("task");
      if (p.meta.count("slot")) recon_txt += " " + p.meta.at("slot");
      recon_txt += "\n";
      for (const auto& turn : p.turns) {
        if (!turn.image.empty())
          recon_txt += "image: " + render_image_rel(turn.image, base) + "\n";
        recon_txt += turn.text + "\n";
      }
    }
    recon_txt += "\n";
  }

  std::string step1_txt;
  std::vector<Triplet> trips = kg.triplets();
  std::sort(trips.begin(), trips.end());
  for (const auto& t : trips) {
    Step1Prompts p;
    try {
      p = build_step1(t, kg, templates);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::missing_image) continue;
      throw;
    }
    step1_txt += "=== (" + t.head + ", " + t.relation + ", " + t.tail + ")\n";
    struct Row {
      const char* name;
      const Step1Prompt* p;
    };
    for (const Row& row :
         {Row{"head", &p.head}, Row{"relation", &p.relation}, Row{"tail", &p.tail}}) {
      step1_txt += std::string("--- ") + row.name + "\n";
      step1_txt += "image: " + render_image_rel(row.p->image, base) + "\n";
      step1_txt += row.p->text + "\n";
      step1_txt += "target: " + row.p->target + "\n";
    }
    step1_txt += "\n";
  }

  write_text_file(fs::path(a.out_dir) / "unified.txt", unified_txt);
  write_text_file(fs::path(a.out_dir) / "step1.txt", step1_txt);
  write_text_file(fs::path(a.out_dir) / "step2.txt", step2_txt);
  write_text_file(fs::path(a.out_dir) / "recon.txt", recon_txt);
  std::cout << "wrote " << questions.size() << " question prompt sets to "
            << a.out_dir << "\n";
  return 0;
}

struct FtdataArgs {
  int stage = 1;
  std::string kg_dir;
  std::string questions;
  std::string out_dir;
  std::string templates_path;
  std::string mode = "mc";
  std::uint64_t seed = 0;
  int option_count = 10;
  double tf_rate = 0.5;
  bool flat = false;
};

int cmd_ftdata_main(const FtdataArgs& a) {
  KnowledgeGraph kg = KnowledgeGraph::load(a.kg_dir);
  TemplateSet templates = a.templates_path.empty()
                              ? TemplateSet()
                              : TemplateSet::from_file(a.templates_path);
  FtSummary summary;
  if (a.stage == 1) {
    summary = gen_step1(kg, a.out_dir, templates, a.flat, a.seed);
  } else if (a.stage == 2) {
    if (a.questions.empty())
      throw Error(ErrorKind::config, "--stage 2 requires --questions");
    auto questions = load_questions(a.questions, kg);
    summary = gen_step2(questions, kg, a.out_dir, parse_mode(a.mode), a.seed,
                        a.option_count, a.tf_rate, templates, a.flat);
  } else {
    throw Error(ErrorKind::config, "--stage must be 1 or 2");
  }
  for (const auto& w : summary.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << summary.stage << ": " << summary.records << " records, "
            << summary.skipped << " skipped, " << summary.images_written
            << " images\n";
  return 0;
}

struct ImagesArgs {
  std::string output;
  std::vector<std::string> inputs;
};

int cmd_images_main(const ImagesArgs& a) {
  std::vector<fs::path> paths(a.inputs.begin(), a.inputs.end());
  RasterImage combined = combine_files(paths);
  save_png(combined, a.output);
  std::cout << combined.width << "x" << combined.height << " -> " << a.output
            << "\n";
  return 0;
}

struct RunArgs {
  std::string config_path;
  RunConfig cfg;
  std::vector<std::pair<std::string, std::string>> overrides;
};

int cmd_run_main(RunArgs& a) {
  RunConfig cfg =
      a.config_path.empty() ? RunConfig() : load_run_config(a.config_path);
  for (const auto& [key, value] : a.overrides) apply_config_entry(cfg, key, value);
  RunArtifacts art = cmd_run(cfg);
  for (const auto& w : art.warnings) std::cerr << "warning: " << w << "\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "n=%zu accuracy=%.3f mrr=%.3f answered=%zu failed=%zu",
                art.report.entity.n, art.report.accuracy, art.report.entity.mrr,
                art.report.answered, art.report.failed);
  std::cout << buf << "\n";
  if (art.report.relation) {
    std::snprintf(buf, sizeof(buf), "relation: n=%zu accuracy=%.3f mrr=%.3f",
                  art.report.relation->n, art.report.relation->hits1,
                  art.report.relation->mrr);
    std::cout << buf << "\n";
  }
  std::cout << "artifacts: " << art.out_dir.string() << "\n";
  return 0;
}

struct ReportArgs {
  std::string run_dir;
  std::vector<std::string> diff_dirs;
};

int cmd_report_main(const ReportArgs& a) {
  if (!a.diff_dirs.empty()) {
    EvalReport ra = score_run(read_results(fs::path(a.diff_dirs[0]) / "results.jsonl"));
    EvalReport rb = score_run(read_results(fs::path(a.diff_dirs[1]) / "results.jsonl"));
    auto table = compare_reports(ra, rb);
    char buf[200];
    std::printf("%-24s %10s %10s %10s\n", "metric", "a", "b", "delta(pp)");
    for (const auto& [metric, row] : table) {
      std::snprintf(buf, sizeof(buf), "%-24s %10.4f %10.4f %+10.1f", metric.c_str(),
                    row.a, row.b, row.delta_pp);
      std::cout << buf << "\n";
    }
    return 0;
  }
  if (a.run_dir.empty())
    throw Error(ErrorKind::config, "report requires --run <dir> or --diff <a> <b>");
  EvalReport rep = cmd_report(a.run_dir);
  std::cout << report_to_markdown(rep);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal analogical-reasoning evaluation harness"};
  app.require_subcommand(1);

  ValidateArgs va;
  auto* validate = app.add_subcommand("validate", "check a knowledge graph directory");
  validate->add_option("--kg", va.kg_dir, "graph directory")->required();
  validate->add_option("--questions", va.questions, "questions file to check too");
  validate->add_flag("!--no-check-images", va.check_images,
                     "skip image readability checks");
  validate->add_option("--max-diagnostics", va.max_diagnostics,
                       "diagnostics to print before truncating");

  PromptsArgs pa;
  auto* prompts = app.add_subcommand("prompts", "render prompt text dumps");
  prompts->add_option("--kg", pa.kg_dir, "graph directory")->required();
  prompts->add_option("--questions", pa.questions, "questions file")->required();
  prompts->add_option("--out", pa.out_dir, "output directory")->required();
  prompts->add_option("--mode", pa.mode, "qa, mc or tf");
  prompts->add_option("--subtask", pa.subtask, "vvt, ttv, vtv, tvt or all");
  prompts->add_option("--seed", pa.seed, "sampling seed");
  prompts->add_option("--option-count", pa.option_count, "options per question");
  prompts->add_option("--tf-rate", pa.tf_rate, "true/false corruption rate");
  prompts->add_option("--templates", pa.templates_path, "template file");
  prompts->add_flag("--no-tr", pa.no_tr, "drop relation side text");
  prompts->add_flag("--no-te", pa.no_te, "drop entity side texts");

  FtdataArgs fa;
  auto* ftdata = app.add_subcommand("ftdata", "emit fine-tuning corpora");
  ftdata->add_option("--stage", fa.stage, "1 (triplets) or 2 (dialogues)")->required();
  ftdata->add_option("--kg", fa.kg_dir, "graph directory")->required();
  ftdata->add_option("--questions", fa.questions, "questions file (stage 2)");
  ftdata->add_option("--out", fa.out_dir, "output directory")->required();
  ftdata->add_option("--mode", fa.mode, "qa, mc or tf (stage 2)");
  ftdata->add_option("--seed", fa.seed, "sampling seed");
  ftdata->add_option("--option-count", fa.option_count, "options per question");
  ftdata->add_option("--tf-rate", fa.tf_rate, "true/false corruption rate");
  ftdata->add_option("--templates", fa.templates_path, "template file");
  ftdata->add_flag("--flat", fa.flat, "emit flat prompt/response records");

  ImagesArgs ia;
  auto* images = app.add_subcommand("images", "combine images side by side");
  images->add_option("output", ia.output, "output PNG path")->required();
  images->add_option("inputs", ia.inputs, "input images, left to right")
      ->required()
      ->expected(-1);

  RunArgs ra;
  auto* run = app.add_subcommand("run", "execute an evaluation run");
  run->add_option("--config", ra.config_path, "key=value config file");
  auto override_opt = [&](const char* flag, const char* key, const char* help) {
    run->add_option_function<std::string>(
        flag,
        [&ra, key](const std::string& v) { ra.overrides.push_back({key, v}); },
        help);
  };
  override_opt("--kg", "kg_dir", "graph directory");
  override_opt("--questions", "questions", "questions file");
  override_opt("--out", "out_dir", "run output directory");
  override_opt("--backend", "backend", "mock or remote");
  override_opt("--endpoint", "endpoint", "chat completions URL");
  override_opt("--model", "model", "model name");
  override_opt("--mode", "mode", "qa, mc or tf");
  override_opt("--subtask", "subtask", "vvt, ttv, vtv, tvt or all");
  override_opt("--seed", "seed", "run seed");
  override_opt("--parallel", "parallelism", "parallel requests");
  override_opt("--error-rate", "oracle_error_rate", "mock oracle error rate");
  override_opt("--option-count", "option_count", "options per question");
  override_opt("--tf-rate", "tf_corruption_rate", "true/false corruption rate");
  override_opt("--templates", "prompt_templates", "template file");
  override_opt("--limit", "limit", "cap on questions (0 = all)");
  run->add_flag_function("--no-mapper", [&ra](std::int64_t) {
    ra.overrides.push_back({"use_mapper", "false"});
  }, "ground by exact match only");
  run->add_flag_function("--no-tr", [&ra](std::int64_t) {
    ra.overrides.push_back({"use_tr", "false"});
  }, "drop relation side text");
  run->add_flag_function("--no-te", [&ra](std::int64_t) {
    ra.overrides.push_back({"use_te", "false"});
  }, "drop entity side texts");
  run->add_flag_function("--no-recon", [&ra](std::int64_t) {
    ra.overrides.push_back({"use_recon", "false"});
  }, "skip the reconstruction stage");

  ReportArgs rpa;
  auto* report = app.add_subcommand("report", "regenerate or diff reports");
  report->add_option("--run", rpa.run_dir, "run directory to re-report");
  report->add_option("--diff", rpa.diff_dirs, "two run directories to compare")
      ->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (validate->parsed()) return cmd_validate_main(va);
    if (prompts->parsed()) return cmd_prompts_main(pa);
    if (ftdata->parsed()) return cmd_ftdata_main(fa);
    if (images->parsed()) return cmd_images_main(ia);
    if (run->parsed()) return cmd_run_main(ra);
    if (report->parsed()) return cmd_report_main(rpa);
  } catch (const Error& e) {
    std::cerr << "error (" << error_kind_name(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
