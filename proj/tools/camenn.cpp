#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "camenn/config.hpp"
#include "camenn/errors.hpp"
#include "camenn/synth.hpp"
#include "camenn/train.hpp"

using namespace camenn;

namespace {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kConfig = 3,
    kData = 4,
    kContract = 5,
    kNumeric = 6,
};

struct RunOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("-c,--config", o.config_path, "INI configuration file");
    cmd->add_option("--set", o.overrides, "Override a config key, e.g. --set moe.top_k=1")->take_all();
    cmd->add_option("--seed", o.seed, "Training seed (train.seed)");
}

RunConfig resolve(const RunOptions& o) {
    RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
    for (const auto& kv : o.overrides) cfg.set_assignment(kv);
    if (o.seed) cfg.train.seed = *o.seed;
    cfg.validate();
    return cfg;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoull(item));
        } catch (const std::exception&) {
            throw ConfigError("bad seed '" + item + "' in --seeds");
        }
    }
    if (out.empty()) throw ConfigError("--seeds needs at least one seed");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CameNN: multi-task cross-modal CVR model on synthetic data"};
    app.require_subcommand(1);

    std::string manifest_path, data_out = "data";
    std::vector<std::string> manifest_sets;
    std::optional<std::uint64_t> data_seed;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset from a manifest");
    gen->add_option("-m,--manifest", manifest_path, "Manifest JSON (checksums are ignored)");
    gen->add_option("-o,--out", data_out, "Output directory")->capture_default_str();
    gen->add_option("--set", manifest_sets, "Override a manifest field, e.g. --set num_items=5000")->take_all();
    gen->add_option("--seed", data_seed, "Dataset seed");

    RunOptions train_opts;
    bool resume = false;
    auto* train = app.add_subcommand("train", "Train a model and write checkpoints and a report");
    add_run_options(train, train_opts);
    train->add_flag("--resume", resume, "Continue from state.ckpt in the output directory");

    RunOptions eval_opts;
    std::string eval_ckpt;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    add_run_options(eval, eval_opts);
    eval->add_option("--checkpoint", eval_ckpt, "Parameter checkpoint")->required();

    RunOptions sim_opts;
    std::string sim_ckpt, sim_out = "similarity.csv";
    std::size_t sim_items = 8;
    auto* sim = app.add_subcommand("export-similarity", "Write the text/image cosine-similarity matrix");
    add_run_options(sim, sim_opts);
    sim->add_option("--checkpoint", sim_ckpt, "Parameter checkpoint (omit for the untrained model)");
    sim->add_option("--items", sim_items, "Number of held-out items")->capture_default_str();
    sim->add_option("-o,--out", sim_out, "CSV output path")->capture_default_str();

    RunOptions abl_opts;
    std::string seeds_text = "1,2,3", abl_out;
    auto* abl = app.add_subcommand("ablate", "Compare expert frames over several seeds");
    add_run_options(abl, abl_opts);
    abl->add_option("--seeds", seeds_text, "Comma separated seeds")->capture_default_str();
    abl->add_option("-o,--out", abl_out, "CSV output path (default: stdout only)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) {
            DatasetManifest m;
            if (!manifest_path.empty()) {
                std::ifstream in(manifest_path);
                if (!in) throw ConfigError("cannot open manifest " + manifest_path);
                std::ostringstream ss;
                ss << in.rdbuf();
                m = manifest_from_json(ss.str());
                m.checksums.clear();
            }
            for (const auto& kv : manifest_sets) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
                set_manifest_field(m, kv.substr(0, eq), kv.substr(eq + 1));
            }
            if (data_seed) m.seed = *data_seed;
            const DatasetManifest written = write_dataset(data_out, generate_dataset(m), m);
            std::cout << "event=gen-data dir=" << data_out << " items=" << m.num_items << " users=" << m.num_users
                      << " interactions=" << m.num_interactions
                      << " interactions_checksum=" << written.checksums.at(kInteractionsFile) << '\n';
        } else if (*train) {
            RunConfig cfg = resolve(train_opts);
            Workspace ws = prepare_workspace(cfg);
            run_training(cfg, ws, &std::cout, resume);
        } else if (*eval) {
            RunConfig cfg = resolve(eval_opts);
            Workspace ws = prepare_workspace(cfg);
            auto model = load_model(cfg, ws, eval_ckpt);
            EvalReport r = evaluate(*model, ws, ws.cvr_test.rows, ws.alignment_heldout_items,
                                    cfg.train.negative_ratio, cfg.train.seed);
            r.seed = cfg.train.seed;
            r.config_hash = cfg.hash();
            std::cout << r.to_json();
        } else if (*sim) {
            RunConfig cfg = resolve(sim_opts);
            Workspace ws = prepare_workspace(cfg);
            std::unique_ptr<CameNN> model;
            if (sim_ckpt.empty()) {
                ModelConfig mc = cfg.model;
                mc.num_users = ws.dataset.data.users.size();
                model = std::make_unique<CameNN>(mc, cfg.train.seed);
            } else {
                model = load_model(cfg, ws, sim_ckpt);
            }
            const auto items = pick_similarity_items(ws, sim_items);
            SimilarityMatrix m = similarity_matrix(*model, ws.bank, items, cfg.similarity_task);
            std::ofstream out(sim_out);
            if (!out) throw ConfigError("cannot write " + sim_out);
            write_similarity_csv(out, m);
            std::printf("event=similarity items=%zu diagonal_mean=%.6f off_diagonal_mean=%.6f out=%s\n", items.size(),
                        m.diagonal_mean(), m.off_diagonal_mean(), sim_out.c_str());
        } else if (*abl) {
            RunConfig cfg = resolve(abl_opts);
            Workspace ws = prepare_workspace(cfg);
            const auto seeds = parse_seeds(seeds_text);
            AblationTable t = run_ablation(cfg, ws, seeds, &std::cerr);
            const std::string csv = t.to_csv();
            std::cout << csv;
            if (!abl_out.empty()) {
                std::ofstream out(abl_out);
                out << csv;
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const ContractError& e) {
        std::cerr << "contract error: " << e.what() << '\n';
        return kContract;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}
