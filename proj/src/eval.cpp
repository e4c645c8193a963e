#include "illuminorm/eval.hpp"

#include "illuminorm/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace illuminorm {

using nlohmann::json;

int Confusion::row_total(const Label& truth) const {
    const auto it = counts.find(truth);
    if (it == counts.end()) return 0;
    int total = 0;
    for (const auto& [_, n] : it->second) total += n;
    return total;
}

json Confusion::to_json() const {
    json out = json::object();
    for (const auto& [truth, row] : counts) {
        json r = json::object();
        for (const auto& [pred, n] : row) r[pred.to_string()] = n;
        out[truth.to_string()] = r;
    }
    return out;
}

namespace {

std::vector<const Image*> all_images(const DatasetManifest& m) {
    std::vector<const Image*> images;
    for (const auto& s : m.scenes)
        for (const auto& v : s.variants) images.push_back(&v);
    return images;
}

}  // namespace

AccuracyResult classification_accuracy(const LatentIndex& index, const ImageCodec& codec, const DatasetManifest& test) {
    if (test.scenes.empty() || test.image_count() == 0) throw ContractError("empty test set");
    if (index.empty()) throw ContractError("cannot classify with an empty index");
    require_matching(index, codec);
    const auto codes = codec.embed_batch(all_images(test));

    AccuracyResult result;
    int scenes_correct = 0;
    std::size_t k = 0;
    for (const auto& scene : test.scenes) {
        std::map<Label, int> votes;
        for (int j = 0; j < scene.variant_count(); ++j) {
            const Label predicted = predict_label(index, codes[k++]);
            ++result.confusion.counts[scene.label][predicted];
            ++votes[predicted];
            ++result.total;
            result.correct += predicted == scene.label;
        }
        // Majority vote; ties go to the smallest label.
        const auto best = std::max_element(votes.begin(), votes.end(),
                                           [](const auto& a, const auto& b) { return a.second < b.second; });
        scenes_correct += best->first == scene.label;
    }
    result.accuracy = static_cast<double>(result.correct) / result.total;
    result.scene_accuracy = static_cast<double>(scenes_correct) / test.scenes.size();
    return result;
}

InvarianceScore invariance_score(const ImageCodec& codec, const DatasetManifest& manifest, const SsimConfig& ssim) {
    const SsimMetric metric(ssim);
    if (manifest.scenes.empty()) throw ContractError("invariance score needs at least one scene");
    double recon_total = 0.0, input_total = 0.0;
    for (const auto& scene : manifest.scenes) {
        const int n = scene.variant_count();
        if (n < 2) throw ContractError("scene " + std::to_string(scene.scene_id) + " has fewer than 2 variants");
        std::vector<const Image*> inputs;
        for (const auto& v : scene.variants) inputs.push_back(&v);
        const auto recons = codec.reconstruct_batch(inputs);
        double r = 0.0, in = 0.0;
        int pairs = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                r += metric(recons[i], recons[j]);
                in += metric(scene.variants[i], scene.variants[j]);
                ++pairs;
            }
        recon_total += r / pairs;
        input_total += in / pairs;
    }
    return {recon_total / manifest.scenes.size(), input_total / manifest.scenes.size()};
}

ReconExtremes recon_extremes(const ImageCodec& codec, const SceneRecord& scene, const SsimConfig& ssim) {
    const SsimMetric metric(ssim);
    const int n = scene.variant_count();
    if (n < 2) throw ContractError("recon_extremes needs at least 2 variants");
    std::vector<const Image*> inputs;
    for (const auto& v : scene.variants) inputs.push_back(&v);
    const auto recons = codec.reconstruct_batch(inputs);

    ReconExtremes out;
    out.first_recon = recons[0];
    out.max_divergent_ssim = std::numeric_limits<double>::infinity();
    for (int j = 1; j < n; ++j) {
        const double s = metric(recons[0], recons[j]);
        if (s < out.max_divergent_ssim) {
            out.max_divergent_ssim = s;
            out.max_divergent_variant = j;
        }
    }
    out.max_divergent_recon = recons[out.max_divergent_variant];

    out.closest_ssim = -std::numeric_limits<double>::infinity();
    out.furthest_ssim = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
        const double s = metric(recons[0], scene.variants[j]);
        if (s > out.closest_ssim) {
            out.closest_ssim = s;
            out.closest_variant = j;
        }
        if (s < out.furthest_ssim) {
            out.furthest_ssim = s;
            out.furthest_variant = j;
        }
    }
    out.closest_input = scene.variants[out.closest_variant];
    out.furthest_input = scene.variants[out.furthest_variant];
    return out;
}

Projection parse_projection(std::string_view text) {
    if (text == "none") return Projection::none;
    if (text == "pca2") return Projection::pca2;
    throw ConfigError("unknown projection '" + std::string(text) + "' (expected none or pca2)");
}

void LatentTable::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "scene_id,variant_id,label";
    for (const auto& c : columns) out << ',' << c;
    out << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const auto& r : rows) {
        out << r.scene_id << ',' << r.variant_id << ',' << r.label.to_string();
        for (double v : r.coordinates) out << ',' << v;
        out << '\n';
    }
}

std::vector<std::vector<double>> pca2(const std::vector<std::vector<double>>& points, std::vector<double>* eigenvalues) {
    if (points.empty()) throw ContractError("PCA needs at least one point");
    const int d = static_cast<int>(points.front().size());
    if (d < 2) throw ContractError("pca2 needs embeddings of dimension >= 2, got " + std::to_string(d));
    const auto n = static_cast<Eigen::Index>(points.size());
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<int>(points[i].size()) != d) throw ContractError("PCA points differ in dimension");
        for (int j = 0; j < d; ++j) x(i, j) = points[i][j];
    }
    x.rowwise() -= x.colwise().mean();
    const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    // Eigenvalues ascend; the leading components are the last two columns.
    Eigen::MatrixXd basis(d, 2);
    for (int c = 0; c < 2; ++c) {
        Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - c);
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        basis.col(c) = v;
    }
    if (eigenvalues) *eigenvalues = {solver.eigenvalues()(d - 1), solver.eigenvalues()(d - 2)};
    const Eigen::MatrixXd projected = x * basis;
    std::vector<std::vector<double>> out(points.size(), std::vector<double>(2));
    for (Eigen::Index i = 0; i < n; ++i) {
        out[i][0] = projected(i, 0);
        out[i][1] = projected(i, 1);
    }
    return out;
}

LatentTable export_latents(const ImageCodec& codec, const DatasetManifest& manifest, Projection projection) {
    if (projection == Projection::pca2 && codec.latent_dim() < 2)
        throw ContractError("pca2 projection needs latent dimension >= 2");
    const auto codes = codec.embed_batch(all_images(manifest));
    LatentTable table;
    std::vector<std::vector<double>> raw;
    for (const auto& c : codes) raw.emplace_back(c.begin(), c.end());
    std::vector<std::vector<double>> coords;
    if (projection == Projection::pca2) {
        coords = pca2(raw, &table.explained_variance);
        table.columns = {"pc1", "pc2"};
    } else {
        coords = raw;
        for (int j = 0; j < codec.latent_dim(); ++j) table.columns.push_back("z" + std::to_string(j));
    }
    std::size_t k = 0;
    for (const auto& scene : manifest.scenes)
        for (int j = 0; j < scene.variant_count(); ++j, ++k)
            table.rows.push_back({scene.scene_id, j, scene.label, coords[k]});
    return table;
}

double triplet_violation_rate(const ImageCodec& codec, const DatasetManifest& manifest, const TripletPolicy& policy,
                              double margin, int samples, std::uint64_t seed) {
    if (samples < 1) throw ContractError("need at least one triplet sample");
    std::vector<int> anchors;
    for (const auto& s : manifest.scenes)
        if (can_anchor(manifest, s.scene_id, policy)) anchors.push_back(s.scene_id);
    if (anchors.empty()) throw SamplingError("no scene can anchor a triplet under policy " + policy.name);

    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, anchors.size() - 1);
    std::vector<TripletSample> triplets;
    std::vector<const Image*> images;
    for (int i = 0; i < samples; ++i) {
        const TripletSample t = sample_triplet(manifest, anchors[pick(rng)], policy, rng);
        for (const PairSample& p : {t.anchor, t.positive, t.negative})
            images.push_back(&manifest.scene(p.scene_id).variants[p.input_variant]);
        triplets.push_back(t);
    }
    const auto codes = codec.embed_batch(images);
    int violated = 0;
    for (int i = 0; i < samples; ++i)
        violated += triplet_hinge(codes[3 * i], codes[3 * i + 1], codes[3 * i + 2], margin) > 0.0;
    return static_cast<double>(violated) / samples;
}

Setup Setup::parse(std::string_view token) {
    std::string t(token);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    Setup s;
    if (t == "cnn-ns" || t == "cnn-es") {
        s.kind = t == "cnn-ns" ? Kind::classifier_no_stopping : Kind::classifier_early_stopping;
        s.name = t == "cnn-ns" ? "CNN-NS" : "CNN-ES";
        return s;
    }
    std::string base = t;
    if (t.size() > 2 && t.ends_with("-v")) {
        s.loss = LossMode::vanilla;
        base = t.substr(0, t.size() - 2);
    }
    try {
        s.variant = parse_variant(base);
    } catch (const ConfigError&) {
        throw ConfigError("unknown setup '" + std::string(token) +
                          "' (expected ae, vae, tae, ae-v, vae-v, tae-v, cnn-ns or cnn-es)");
    }
    for (char& c : base) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    s.name = base + (s.loss == LossMode::vanilla ? "-V" : "");
    return s;
}

std::vector<Setup> Setup::parse_list(std::string_view comma_separated) {
    std::vector<Setup> out;
    std::stringstream in{std::string(comma_separated)};
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(parse(item));
    if (out.empty()) throw ConfigError("no setups given");
    return out;
}

void summarize(SetupRow& row) {
    std::vector<double> ok, scene;
    for (const auto& a : row.accuracy)
        if (a) ok.push_back(*a);
    for (const auto& a : row.scene_accuracy)
        if (a) scene.push_back(*a);
    row.failures = static_cast<int>(row.accuracy.size() - ok.size());
    row.mean = row.variance = row.stddev = row.scene_mean = 0.0;
    if (!ok.empty()) {
        for (double a : ok) row.mean += a;
        row.mean /= ok.size();
        for (double a : ok) row.variance += (a - row.mean) * (a - row.mean);
        row.variance /= ok.size();
        row.stddev = std::sqrt(row.variance);
    }
    if (!scene.empty()) {
        for (double a : scene) row.scene_mean += a;
        row.scene_mean /= scene.size();
    }
}

std::vector<std::uint64_t> default_seeds(int count) {
    if (count < 1) throw ConfigError("need at least one seed");
    std::vector<std::uint64_t> seeds;
    for (int i = 1; i <= count; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
    return seeds;
}

namespace {

json optional_column(const std::vector<std::optional<double>>& values) {
    json out = json::array();
    for (const auto& v : values) out.push_back(v ? json(*v) : json(nullptr));
    return out;
}

std::vector<std::optional<double>> read_optional_column(const json& j) {
    std::vector<std::optional<double>> out;
    for (const auto& v : j) out.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    return out;
}

}  // namespace

std::string EvalReport::config_fingerprint() const {
    const std::string text = config.dump();
    return fnv1a_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

json EvalReport::to_json() const {
    json rows_json = json::array();
    for (const auto& r : rows) {
        json invariance = json::array();
        for (const auto& v : r.invariance)
            invariance.push_back(v ? json{{"recon_score", v->recon_score}, {"input_score", v->input_score}}
                                   : json(nullptr));
        rows_json.push_back({{"setup", r.name},
                             {"accuracy", optional_column(r.accuracy)},
                             {"scene_accuracy", optional_column(r.scene_accuracy)},
                             {"errors", r.errors},
                             {"invariance", invariance},
                             {"fingerprints", r.fingerprints},
                             {"confusion", r.confusion.to_json()},
                             {"mean", r.mean},
                             {"variance", r.variance},
                             {"std", r.stddev},
                             {"scene_mean", r.scene_mean},
                             {"failures", r.failures}});
    }
    return json{{"schema_version", kSchemaVersion},
                {"seeds", seeds},
                {"config", config},
                {"config_fingerprint", config_fingerprint()},
                {"rows", rows_json}};
}

EvalReport EvalReport::from_json(const json& j) {
    if (j.at("schema_version").get<int>() != kSchemaVersion) throw DataError("unsupported report schema version");
    EvalReport r;
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.config = j.at("config");
    for (const auto& row : j.at("rows")) {
        SetupRow s;
        s.name = row.at("setup").get<std::string>();
        s.accuracy = read_optional_column(row.at("accuracy"));
        s.scene_accuracy = read_optional_column(row.at("scene_accuracy"));
        s.errors = row.at("errors").get<std::vector<std::string>>();
        for (const auto& v : row.at("invariance"))
            s.invariance.push_back(v.is_null() ? std::nullopt
                                               : std::optional<InvarianceScore>(InvarianceScore{
                                                     v.at("recon_score").get<double>(), v.at("input_score").get<double>()}));
        s.fingerprints = row.at("fingerprints").get<std::vector<std::string>>();
        for (const auto& [truth, preds] : row.at("confusion").items())
            for (const auto& [pred, n] : preds.items())
                s.confusion.counts[Label::parse(truth)][Label::parse(pred)] = n.get<int>();
        s.mean = row.at("mean").get<double>();
        s.variance = row.at("variance").get<double>();
        s.stddev = row.at("std").get<double>();
        s.scene_mean = row.at("scene_mean").get<double>();
        s.failures = row.at("failures").get<int>();
        r.rows.push_back(std::move(s));
    }
    return r;
}

std::string EvalReport::to_table() const {
    std::ostringstream out;
    out << std::left << std::setw(10) << "setup" << std::right << std::setw(10) << "mean[%]" << std::setw(12)
        << "var[pp^2]" << std::setw(10) << "std[pp]" << std::setw(11) << "scene[%]" << std::setw(8) << "ok" << std::setw(16) << "inv recon/input" << "  per-seed[%]\n";
    out << std::fixed << std::setprecision(2);
    for (const auto& r : rows) {
        const int ok = static_cast<int>(r.accuracy.size()) - r.failures;
        out << std::left << std::setw(10) << r.name << std::right << std::setw(10) << 100.0 * r.mean << std::setw(12)
            << 1e4 * r.variance << std::setw(10) << 100.0 * r.stddev << std::setw(11) << 100.0 * r.scene_mean
            << std::setw(8) << (std::to_string(ok) + "/" + std::to_string(r.accuracy.size()));
        double recon = 0.0, input = 0.0;
        int scored = 0;
        for (const auto& v : r.invariance)
            if (v) {
                recon += v->recon_score;
                input += v->input_score;
                ++scored;
            }
        std::ostringstream inv;
        inv << std::fixed << std::setprecision(3);
        if (scored)
            inv << recon / scored << "/" << input / scored;
        else
            inv << "-";
        out << std::setw(16) << inv.str() << "  ";
        for (std::size_t i = 0; i < r.accuracy.size(); ++i) {
            if (i) out << ' ';
            if (r.accuracy[i])
                out << 100.0 * *r.accuracy[i];
            else
                out << "failed";
        }
        out << '\n';
    }
    return out.str();
}

const SetupRow* EvalReport::row(std::string_view name) const {
    for (const auto& r : rows)
        if (r.name == name) return &r;
    return nullptr;
}

EvalReport multi_seed_report(const ArchConfig& arch, const TrainConfig& train_config,
                             const ClassifierConfig& classifier_config, const std::vector<std::uint64_t>& seeds,
                             const DatasetManifest& train, const DatasetManifest& test,
                             const std::vector<Setup>& setups, const SweepHooks& hooks, int jobs) {
    if (seeds.empty()) throw ConfigError("need at least one seed");
    if (setups.empty()) throw ConfigError("no setups given");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    EvalReport report;
    report.seeds = seeds;
    json setup_names = json::array();
    for (const auto& s : setups) setup_names.push_back(s.name);
    report.config = {{"arch", arch.to_json()},
                     {"train", train_config.to_json()},
                     {"classifier",
                      {{"widths", classifier_config.widths},
                       {"epochs", classifier_config.epochs},
                       {"batch_size", classifier_config.batch_size},
                       {"learning_rate", classifier_config.learning_rate},
                       {"patience", classifier_config.patience},
                       {"validation_fraction", classifier_config.validation_fraction}}},
                     {"setups", setup_names},
                     {"train_scenes", train.scenes.size()},
                     {"test_scenes", test.scenes.size()},
                     {"dataset_seed", train.meta.seed}};

    struct Cell {
        std::optional<double> accuracy, scene_accuracy;
        std::string error;
        std::optional<InvarianceScore> invariance;
        std::string fingerprint;
        Confusion confusion;
    };
    const std::size_t n_seeds = seeds.size();
    std::vector<std::vector<Cell>> cells(setups.size(), std::vector<Cell>(n_seeds));
    std::vector<std::optional<ClassifierResult>> classifier_runs(n_seeds);
    std::vector<std::string> classifier_errors(n_seeds);

    // Every (setup, seed) run is independent; classifier runs are shared by the NS and ES rows.
    std::vector<std::function<void()>> tasks;
    std::mutex hook_mutex;
    auto report_progress = [&](const std::string& message) {
        if (!hooks.progress) return;
        std::lock_guard lock(hook_mutex);
        hooks.progress(message);
    };
    const bool wants_classifier = std::any_of(setups.begin(), setups.end(), [](const Setup& s) {
        return s.kind != Setup::Kind::encoder_decoder;
    });
    if (wants_classifier)
        for (std::size_t k = 0; k < n_seeds; ++k)
            tasks.push_back([&, k] {
                report_progress("CNN seed " + std::to_string(seeds[k]));
                try {
                    classifier_runs[k] = train_baseline_classifier(train, test, classifier_config, seeds[k]);
                } catch (const std::exception& e) {
                    classifier_errors[k] = e.what();
                }
            });
    for (std::size_t i = 0; i < setups.size(); ++i) {
        if (setups[i].kind != Setup::Kind::encoder_decoder) continue;
        for (std::size_t k = 0; k < n_seeds; ++k)
            tasks.push_back([&, i, k] {
                const Setup& setup = setups[i];
                const std::uint64_t seed = seeds[k];
                report_progress(setup.name + " seed " + std::to_string(seed));
                Cell& cell = cells[i][k];
                try {
                    ArchConfig a = arch;
                    a.variant = setup.variant;
                    TrainConfig c = train_config;
                    c.loss = setup.loss;
                    c.seed = seed;
                    EncoderDecoder model(a, seed);
                    const TrainHistory history = train_model(model, train, c);
                    const AccuracyResult result = classification_accuracy(build_index(model, train), model, test);
                    cell.accuracy = result.accuracy;
                    cell.scene_accuracy = result.scene_accuracy;
                    cell.confusion = result.confusion;
                    cell.invariance = invariance_score(model, test, c.ssim);
                    cell.fingerprint = model.fingerprint();
                    if (hooks.trained) {
                        std::lock_guard lock(hook_mutex);
                        hooks.trained(setup, seed, model, history);
                    }
                } catch (const std::exception& e) {
                    cell = Cell{};
                    cell.error = e.what();
                }
            });
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t = next++; t < tasks.size(); t = next++) tasks[t]();
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int j = 0; j < std::min<int>(jobs, static_cast<int>(tasks.size())); ++j) pool.emplace_back(worker);
    }

    for (std::size_t i = 0; i < setups.size(); ++i) {
        SetupRow row;
        row.name = setups[i].name;
        for (std::size_t k = 0; k < n_seeds; ++k) {
            Cell cell = cells[i][k];
            if (setups[i].kind != Setup::Kind::encoder_decoder) {
                if (classifier_runs[k]) {
                    cell.accuracy = setups[i].kind == Setup::Kind::classifier_no_stopping
                                        ? classifier_runs[k]->accuracy_no_stopping
                                        : classifier_runs[k]->accuracy_early_stopping;
                } else {
                    cell.error = classifier_errors[k];
                }
            }
            row.accuracy.push_back(cell.accuracy);
            row.scene_accuracy.push_back(cell.scene_accuracy);
            row.errors.push_back(cell.error);
            row.invariance.push_back(cell.invariance);
            row.fingerprints.push_back(cell.fingerprint);
            for (const auto& [truth, preds] : cell.confusion.counts)
                for (const auto& [pred, n] : preds) row.confusion.counts[truth][pred] += n;
        }
        summarize(row);
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace illuminorm
