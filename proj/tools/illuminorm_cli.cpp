#include "illuminorm/errors.hpp"
#include "illuminorm/eval.hpp"
#include "illuminorm/synthgen.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace illuminorm;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kDataError = 2, kNumeric = 3 };

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// Flat "key = value" lines; '#' starts a comment. Each key becomes "--key=value".
std::vector<std::string> read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::vector<std::string> args;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty() || key == "config")
            throw ConfigError(path.string() + ":" + std::to_string(number) + ": invalid key '" + key + "'");
        // An empty value keeps the option's default.
        const std::string value = trim(line.substr(eq + 1));
        if (!value.empty()) args.push_back("--" + key + "=" + value);
    }
    return args;
}

/// Moves --config FILE out of the arguments and splices the file's keys in front of the
/// remaining flags, so explicit flags win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    if (args.size() < 2) return args;
    std::vector<std::string> rest{args[0], args[1]};
    std::vector<std::string> from_file;
    for (std::size_t i = 2; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--config") {
            if (i + 1 >= args.size()) throw ConfigError("--config needs a file name");
            auto more = read_config_file(args[++i]);
            from_file.insert(from_file.end(), more.begin(), more.end());
        } else if (a.starts_with("--config=")) {
            auto more = read_config_file(a.substr(9));
            from_file.insert(from_file.end(), more.begin(), more.end());
        } else {
            rest.push_back(a);
        }
    }
    rest.insert(rest.begin() + 2, from_file.begin(), from_file.end());
    return rest;
}

/// Every option of the subcommand as key = value, loadable again with --config.
std::string effective_config(const CLI::App& sub) {
    std::ostringstream out;
    out << "# illuminorm " << sub.get_name() << "\n";
    for (const CLI::Option* opt : sub.get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string& key = opt->get_lnames().front();
        if (key == "help") continue;
        std::string value;
        if (opt->count() > 0) {
            const auto& results = opt->results();
            value = results.back();
        } else {
            value = opt->get_default_str();
        }
        out << key << " = " << value << "\n";
    }
    return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("expected a comma-separated integer list, got '" + text + "'");
        }
    }
    if (out.empty()) throw ConfigError("expected a non-empty integer list");
    return out;
}

struct GenOptions {
    std::string out;
    GenConfig config;
    int size = 64;
};

struct ModelOptions {
    std::string variant = "tae";
    int latent_dim = 16;
    std::string widths = "16,32,64,128";
    std::string loss = "impossible";
    int batch_size = 16;
    int epochs = 60;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double margin = 1.0;
    double beta = 0.001;
    std::uint64_t seed = 1;
    std::string policy = "seat";
    std::string augment = "none";
    std::string augment_spec;
    int ssim_window = 11;
    double ssim_sigma = 1.5;

    void add_to(CLI::App& app, bool with_model_shape) {
        if (with_model_shape) {
            app.add_option("--variant", variant, "ae | vae | tae");
            app.add_option("--loss", loss, "impossible | vanilla");
        }
        app.add_option("--latent-dim", latent_dim, "Latent dimension");
        app.add_option("--widths", widths, "Encoder stage widths, comma separated");
        app.add_option("--seed", seed, "Seed for initialisation and sampling");
        app.add_option("--epochs", epochs, "Training epochs");
        app.add_option("--batch-size", batch_size, "Scenes per batch");
        app.add_option("--lr", lr, "Adam learning rate");
        app.add_option("--beta1", beta1, "Adam beta1");
        app.add_option("--beta2", beta2, "Adam beta2");
        app.add_option("--margin", margin, "Triplet margin");
        app.add_option("--beta", beta, "KL weight for the VAE");
        app.add_option("--policy", policy, "Triplet policy: seat | pose | location");
        app.add_option("--augment", augment, "none | both | reverse_denoise");
        app.add_option("--augment-spec", augment_spec, "e.g. gain:0.7:1.3,bias:-0.1:0.1,noise:0.02");
        app.add_option("--ssim-window", ssim_window, "SSIM Gaussian window size");
        app.add_option("--ssim-sigma", ssim_sigma, "SSIM Gaussian sigma");
    }

    ArchConfig arch(const DatasetMeta& meta) const {
        ArchConfig a;
        a.height = meta.height;
        a.width = meta.width;
        a.channels = meta.channels;
        a.widths = parse_int_list(widths);
        a.latent_dim = latent_dim;
        a.variant = parse_variant(variant);
        a.validate();
        return a;
    }

    TrainConfig train() const {
        TrainConfig t;
        t.batch_size = batch_size;
        t.epochs = epochs;
        t.learning_rate = lr;
        t.beta1 = beta1;
        t.beta2 = beta2;
        t.margin = margin;
        t.kl_weight = beta;
        t.seed = seed;
        t.loss = parse_loss_mode(loss);
        t.policy = policy;
        t.augment_mode = augment;
        t.augment_spec = augment_spec;
        t.ssim.window_size = ssim_window;
        t.ssim.sigma = ssim_sigma;
        t.validate();
        return t;
    }
};

Split split_of(const std::string& name) { return parse_split(name); }

void require_data_root(const fs::path& root) {
    if (!fs::exists(root / "meta.json")) throw DataError("no dataset at " + root.string() + " (meta.json missing)");
}

int run_gen_data(const GenOptions& o, const CLI::App& sub) {
    GenConfig config = o.config;
    config.height = config.width = o.size;
    config.validate();
    const GeneratedDataset data = generate_dataset(config, o.out);
    write_text(fs::path(o.out) / "effective_config.txt", effective_config(sub));
    std::cout << "wrote " << data.train.scenes.size() << " train and " << data.test.scenes.size()
              << " test scenes x " << config.variants << " variants to " << o.out << "\n";
    return kOk;
}

struct TrainOptions {
    std::string data;
    std::string out;
    ModelOptions model;
};

int run_train(const TrainOptions& o, const CLI::App& sub) {
    const TrainConfig cfg = o.model.train();
    require_data_root(o.data);
    const DatasetManifest manifest = load_manifest(o.data, Split::train);
    const ArchConfig arch = o.model.arch(manifest.meta);
    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "effective_config.txt", effective_config(sub));

    const TrainResult result = train(manifest, arch, cfg, [&](const EpochRecord& e) {
        std::cerr << "epoch " << e.epoch << "/" << cfg.epochs << std::setprecision(6) << "  recon " << e.loss.recon
                  << "  triplet " << e.loss.triplet << "  kl " << e.loss.kl << "  total " << e.loss.total << "  ("
                  << std::setprecision(3) << e.seconds << "s)\n";
    });
    const fs::path out(o.out);
    save_checkpoint(result.checkpoint, out / "model.ckpt");
    result.history.write_csv(out / "history.csv");
    result.history.write_steps_csv(out / "steps.csv");
    json summary{{"variant", std::string(to_string(arch.variant))},
                 {"loss", std::string(to_string(cfg.loss))},
                 {"seed", cfg.seed},
                 {"epochs", cfg.epochs},
                 {"fingerprint", result.checkpoint.fingerprint()},
                 {"training", result.checkpoint.training}};
    write_json(out / "summary.json", summary);
    std::cout << "checkpoint " << (out / "model.ckpt").string() << " fingerprint " << result.checkpoint.fingerprint()
              << "\n";
    return kOk;
}

struct IndexOptions {
    std::string checkpoint;
    std::string data;
    std::string split = "train";
    std::string out;
};

int run_index(const IndexOptions& o) {
    require_data_root(o.data);
    const EncoderDecoder model = load_checkpoint(o.checkpoint).instantiate();
    const LatentIndex index = build_index(model, load_manifest(o.data, split_of(o.split)));
    if (const auto parent = fs::path(o.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    index.save(o.out);
    std::cout << "indexed " << index.size() << " images (dim " << index.dim() << ") to " << o.out << "\n";
    return kOk;
}

struct QueryOptions {
    std::string checkpoint;
    std::string index;
    std::string image;
    std::string data;
    std::string split = "train";
    int scene = -1;
    int variant = 0;
    int neighbours = 1;
    std::string out;
};

void add_query_options(CLI::App& sub, QueryOptions& o) {
    sub.add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    sub.add_option("--index", o.index, "Latent index CSV")->required();
    sub.add_option("--image", o.image, "Query PNG");
    sub.add_option("--data", o.data, "Dataset root (with --scene)");
    sub.add_option("--split", o.split, "Dataset split (with --scene)");
    sub.add_option("--scene", o.scene, "Scene id in the dataset split");
    sub.add_option("--variant", o.variant, "Variant index of the scene");
}

Image query_image(const QueryOptions& o) {
    if (!o.image.empty()) {
        if (o.scene >= 0) throw ConfigError("give either --image or --data/--scene, not both");
        return read_png(o.image);
    }
    if (o.data.empty() || o.scene < 0) throw ConfigError("a query needs --image or --data with --scene");
    require_data_root(o.data);
    return read_png(variant_path(o.data, split_of(o.split), o.scene, o.variant));
}

struct Loaded {
    EncoderDecoder model;
    LatentIndex index;
};

Loaded load_model_and_index(const QueryOptions& o) {
    Loaded l{load_checkpoint(o.checkpoint).instantiate(), LatentIndex::load(o.index)};
    require_matching(l.index, l.model);
    return l;
}

int run_predict(const QueryOptions& o) {
    const Image x = query_image(o);
    const Loaded l = load_model_and_index(o);
    const auto z = l.model.embed(x);
    const auto nearest = l.index.knn(z, static_cast<std::size_t>(o.neighbours));
    json neighbours = json::array();
    for (const auto& n : nearest) {
        const IndexEntry& e = l.index.entry(n.entry);
        neighbours.push_back(
            {{"scene_id", e.scene_id}, {"variant_id", e.variant_id}, {"label", e.label.to_string()}, {"distance", n.distance}});
    }
    const IndexEntry& best = l.index.entry(nearest.front().entry);
    std::cout << best.label.to_string() << "\n";
    if (!o.out.empty()) write_json(o.out, {{"label", best.label.to_string()}, {"neighbours", neighbours}});
    return kOk;
}

int run_reconstruct(const QueryOptions& o) {
    if (o.out.empty()) throw ConfigError("reconstruct needs --out");
    const Image x = query_image(o);
    const Loaded l = load_model_and_index(o);
    const Image direct = l.model.reconstruct(x);
    const Image nn = nn_reconstruct(l.index, l.model, x);
    if (const auto parent = fs::path(o.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    write_png(tile_grid({{x, direct, nn}}), o.out);
    std::cout << "wrote input | reconstruction | nearest-neighbour reconstruction to " << o.out << "\n";
    return kOk;
}

struct EvaluateOptions {
    std::string data;
    std::string out;
    std::string setups = "ae,vae,tae,ae-v,vae-v,tae-v,cnn-ns,cnn-es";
    int seeds = 5;
    int jobs = 1;
    int classifier_epochs = 60;
    double classifier_lr = 1e-4;
    int patience = 10;
    int grid_scenes = 4;
    ModelOptions model;
};

std::string file_token(std::string name) {
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    return name;
}

int run_evaluate(const EvaluateOptions& o, const CLI::App& sub) {
    const TrainConfig train_cfg = o.model.train();
    const auto setups = Setup::parse_list(o.setups);
    const auto seeds = default_seeds(o.seeds);
    require_data_root(o.data);
    const DatasetManifest train = load_manifest(o.data, Split::train);
    const DatasetManifest test = load_manifest(o.data, Split::test);
    const ArchConfig arch = o.model.arch(train.meta);
    ClassifierConfig cls;
    cls.widths = arch.widths;
    cls.epochs = o.classifier_epochs;
    cls.batch_size = train_cfg.batch_size;
    cls.learning_rate = o.classifier_lr;
    cls.patience = o.patience;
    cls.validate();

    const fs::path out(o.out);
    fs::create_directories(out / "grids");
    write_text(out / "effective_config.txt", effective_config(sub));

    SweepHooks hooks;
    hooks.progress = [](const std::string& m) { std::cerr << "running " << m << "\n"; };
    hooks.trained = [&](const Setup& setup, std::uint64_t seed, const EncoderDecoder& model, const TrainHistory&) {
        if (seed != seeds.front()) return;
        // Each test scene contributes a row of inputs and a row of their reconstructions.
        std::vector<std::vector<Image>> rows;
        const int scenes = std::min<int>(o.grid_scenes, static_cast<int>(test.scenes.size()));
        for (int s = 0; s < scenes; ++s) {
            const SceneRecord& scene = test.scenes[s];
            std::vector<const Image*> inputs;
            for (const auto& v : scene.variants) inputs.push_back(&v);
            rows.push_back(scene.variants);
            rows.push_back(model.reconstruct_batch(inputs));
        }
        if (!rows.empty()) write_png(tile_grid(rows), out / "grids" / (file_token(setup.name) + "_test.png"));
        if (!test.scenes.empty()) {
            const ReconExtremes ex = recon_extremes(model, test.scenes.front(), train_cfg.ssim);
            write_png(tile_grid({{test.scenes.front().variants.front(), ex.first_recon, ex.max_divergent_recon,
                                  ex.closest_input, ex.furthest_input}}),
                      out / "grids" / (file_token(setup.name) + "_extremes.png"));
        }
    };
    const EvalReport report = multi_seed_report(arch, train_cfg, cls, seeds, train, test, setups, hooks, o.jobs);
    write_json(out / "report.json", report.to_json());
    write_text(out / "report.txt", report.to_table());
    std::cout << report.to_table();
    return kOk;
}

struct ExportOptions {
    std::string checkpoint;
    std::string data;
    std::string split = "train";
    std::string projection = "none";
    std::string out;
};

int run_export(const ExportOptions& o) {
    require_data_root(o.data);
    const Projection projection = parse_projection(o.projection);
    const EncoderDecoder model = load_checkpoint(o.checkpoint).instantiate();
    const LatentTable table = export_latents(model, load_manifest(o.data, split_of(o.split)), projection);
    if (const auto parent = fs::path(o.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    table.write_csv(o.out);
    std::cout << "exported " << table.rows.size() << " rows x " << table.columns.size() << " columns to " << o.out
              << "\n";
    return kOk;
}

struct DiagnoseOptions {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    int samples = 1000;
    std::uint64_t seed = 1;
    std::string out;
};

int run_diagnose(const DiagnoseOptions& o) {
    require_data_root(o.data);
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const EncoderDecoder model = ckpt.instantiate();
    const TrainConfig cfg = ckpt.training.contains("config") ? TrainConfig::from_json(ckpt.training["config"]) : TrainConfig{};
    const DatasetManifest train = load_manifest(o.data, Split::train);
    const DatasetManifest target = o.split == "train" ? train : load_manifest(o.data, split_of(o.split));

    const InvarianceScore inv = invariance_score(model, target, cfg.ssim);
    const AccuracyResult acc = classification_accuracy(build_index(model, train), model, target);
    json report{{"split", o.split},
                {"fingerprint", ckpt.fingerprint()},
                {"variant", std::string(to_string(model.variant()))},
                {"invariance", {{"recon_score", inv.recon_score}, {"input_score", inv.input_score}}},
                {"accuracy", acc.accuracy},
                {"scene_accuracy", acc.scene_accuracy},
                {"confusion", acc.confusion.to_json()}};
    try {
        report["triplet_violation_rate"] =
            triplet_violation_rate(model, target, TripletPolicy::by_name(cfg.policy), cfg.margin, o.samples, o.seed);
    } catch (const SamplingError& e) {
        report["triplet_violation_rate"] = nullptr;
        report["triplet_violation_error"] = e.what();
    }
    if (!o.out.empty()) write_json(o.out, report);
    std::cout << report.dump(2) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"illuminorm: illumination-invariant encoder-decoders with nearest-neighbour retrieval", "illuminorm"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.set_version_flag("--version", "illuminorm 0.1.0");
    app.footer("Every subcommand also accepts --config FILE with flat 'key = value' lines; flags override it.");

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Render the synthetic cabin dataset");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--scenes", gen.config.train_scenes, "Training scenes");
    gen_cmd->add_option("--test-scenes", gen.config.test_scenes, "Test scenes");
    gen_cmd->add_option("--variants", gen.config.variants, "Illumination variants per scene (>= 2)");
    gen_cmd->add_option("--seed", gen.config.seed, "Generator seed");
    gen_cmd->add_option("--size", gen.size, "Image height and width (>= 32)");
    gen_cmd->add_option("--balance", gen.config.balance, "balanced | uniform");

    TrainOptions tr;
    auto* train_cmd = app.add_subcommand("train", "Train an encoder-decoder");
    train_cmd->add_option("--data", tr.data, "Dataset root")->required();
    train_cmd->add_option("--out", tr.out, "Run directory")->required();
    tr.model.add_to(*train_cmd, true);

    IndexOptions ix;
    auto* index_cmd = app.add_subcommand("index", "Embed a dataset split into a latent index");
    index_cmd->add_option("--checkpoint", ix.checkpoint, "Model checkpoint")->required();
    index_cmd->add_option("--data", ix.data, "Dataset root")->required();
    index_cmd->add_option("--split", ix.split, "train | test");
    index_cmd->add_option("--out", ix.out, "Index CSV")->required();

    QueryOptions pr;
    auto* predict_cmd = app.add_subcommand("predict", "Label of the nearest training embedding");
    add_query_options(*predict_cmd, pr);
    predict_cmd->add_option("--neighbours", pr.neighbours, "Neighbours listed in --out");
    predict_cmd->add_option("--out", pr.out, "Optional JSON with the neighbours");

    QueryOptions rc;
    auto* recon_cmd = app.add_subcommand("reconstruct", "Direct and nearest-neighbour reconstruction side by side");
    add_query_options(*recon_cmd, rc);
    recon_cmd->add_option("--out", rc.out, "Output PNG")->required();

    EvaluateOptions ev;
    auto* eval_cmd = app.add_subcommand("evaluate", "Multi-seed accuracy sweep over setups");
    eval_cmd->add_option("--data", ev.data, "Dataset root")->required();
    eval_cmd->add_option("--out", ev.out, "Report directory")->required();
    eval_cmd->add_option("--setups", ev.setups, "ae, vae, tae, ae-v, vae-v, tae-v, cnn-ns, cnn-es");
    eval_cmd->add_option("--seeds", ev.seeds, "Number of seeds (1..N)");
    eval_cmd->add_option("--jobs", ev.jobs, "Parallel runs");
    eval_cmd->add_option("--classifier-epochs", ev.classifier_epochs, "Baseline classifier epochs");
    eval_cmd->add_option("--classifier-lr", ev.classifier_lr, "Baseline classifier learning rate");
    eval_cmd->add_option("--patience", ev.patience, "Early-stopping patience");
    eval_cmd->add_option("--grid-scenes", ev.grid_scenes, "Test scenes drawn in the PNG grids");
    ev.model.add_to(*eval_cmd, false);

    ExportOptions ex;
    auto* export_cmd = app.add_subcommand("export-latents", "Write embeddings as CSV");
    export_cmd->add_option("--checkpoint", ex.checkpoint, "Model checkpoint")->required();
    export_cmd->add_option("--data", ex.data, "Dataset root")->required();
    export_cmd->add_option("--split", ex.split, "train | test");
    export_cmd->add_option("--projection", ex.projection, "none | pca2");
    export_cmd->add_option("--out", ex.out, "Output CSV")->required();

    DiagnoseOptions dg;
    auto* diag_cmd = app.add_subcommand("diagnose", "Invariance, accuracy and triplet statistics of a checkpoint");
    diag_cmd->add_option("--checkpoint", dg.checkpoint, "Model checkpoint")->required();
    diag_cmd->add_option("--data", dg.data, "Dataset root")->required();
    diag_cmd->add_option("--split", dg.split, "train | test");
    diag_cmd->add_option("--samples", dg.samples, "Triplets sampled for the violation rate");
    diag_cmd->add_option("--seed", dg.seed, "Triplet sampling seed");
    diag_cmd->add_option("--out", dg.out, "Optional JSON output");

    try {
        std::vector<std::string> args = expand_config(std::vector<std::string>(argv, argv + argc));
        args.erase(args.begin());
        std::reverse(args.begin(), args.end());
        try {
            app.parse(args);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e);
            return code == 0 ? kOk : kUsage;
        }
        if (gen_cmd->parsed()) return run_gen_data(gen, *gen_cmd);
        if (train_cmd->parsed()) return run_train(tr, *train_cmd);
        if (index_cmd->parsed()) return run_index(ix);
        if (predict_cmd->parsed()) return run_predict(pr);
        if (recon_cmd->parsed()) return run_reconstruct(rc);
        if (eval_cmd->parsed()) return run_evaluate(ev, *eval_cmd);
        if (export_cmd->parsed()) return run_export(ex);
        if (diag_cmd->parsed()) return run_diagnose(dg);
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
}
