#include "illuminorm/training.hpp"

#include "illuminorm/errors.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace illuminorm {

using nlohmann::json;

std::string_view to_string(LossMode mode) { return mode == LossMode::impossible ? "impossible" : "vanilla"; }

LossMode parse_loss_mode(std::string_view text) {
    if (text == "impossible") return LossMode::impossible;
    if (text == "vanilla") return LossMode::vanilla;
    throw ConfigError("unknown loss mode '" + std::string(text) + "' (expected impossible or vanilla)");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(margin >= 0.0)) throw ConfigError("triplet margin must be >= 0");
    if (!(kl_weight >= 0.0)) throw ConfigError("KL weight must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    TripletPolicy::by_name(policy);
    if (augment_mode != "none") {
        parse_augment_mode(augment_mode);
        if (!AugmentSpec::parse(augment_spec).is_photometric())
            throw ConfigError("augmentation spec contains a geometric transform");
    }
    ssim.validate();
}

json TrainConfig::to_json() const {
    return json{{"batch_size", batch_size},
                {"epochs", epochs},
                {"learning_rate", learning_rate},
                {"beta1", beta1},
                {"beta2", beta2},
                {"margin", margin},
                {"kl_weight", kl_weight},
                {"seed", seed},
                {"loss", std::string(illuminorm::to_string(loss))},
                {"policy", policy},
                {"augment_mode", augment_mode},
                {"augment_spec", augment_spec},
                {"ssim",
                 {{"window_size", ssim.window_size},
                  {"sigma", ssim.sigma},
                  {"k1", ssim.k1},
                  {"k2", ssim.k2},
                  {"dynamic_range", ssim.dynamic_range}}}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.margin = j.at("margin").get<double>();
    c.kl_weight = j.at("kl_weight").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.loss = parse_loss_mode(j.at("loss").get<std::string>());
    c.policy = j.at("policy").get<std::string>();
    c.augment_mode = j.at("augment_mode").get<std::string>();
    c.augment_spec = j.at("augment_spec").get<std::string>();
    const auto& s = j.at("ssim");
    c.ssim.window_size = s.at("window_size").get<int>();
    c.ssim.sigma = s.at("sigma").get<double>();
    c.ssim.k1 = s.at("k1").get<double>();
    c.ssim.k2 = s.at("k2").get<double>();
    c.ssim.dynamic_range = s.at("dynamic_range").get<double>();
    return c;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
    recon += o.recon;
    triplet += o.triplet;
    kl += o.kl;
    total += o.total;
    return *this;
}

double loss_recon_pair(const ImageCodec& model, std::span<const ImagePair> batch, const SsimMetric& metric,
                       LossMode mode) {
    double total = 0.0;
    for (const auto& pair : batch) {
        const Image& target = mode == LossMode::vanilla ? *pair.input : *pair.target;
        const Image recon = model.reconstruct(*pair.input);
        if (!recon.same_shape(target)) throw ContractError("reconstruction and target differ in shape");
        total += 1.0 - metric(recon, target);
    }
    return total;
}

double triplet_hinge(std::span<const float> anchor, std::span<const float> positive, std::span<const float> negative,
                     double alpha) {
    if (anchor.size() != positive.size() || anchor.size() != negative.size())
        throw ContractError("triplet codes differ in length");
    double dp = 0.0, dn = 0.0;
    for (std::size_t i = 0; i < anchor.size(); ++i) {
        const double a = anchor[i], p = positive[i], n = negative[i];
        dp += (a - p) * (a - p);
        dn += (a - n) * (a - n);
    }
    return std::max(0.0, dp - dn + alpha);
}

double loss_triplet(const std::vector<std::vector<float>>& anchors, const std::vector<std::vector<float>>& positives,
                    const std::vector<std::vector<float>>& negatives, double alpha) {
    if (anchors.size() != positives.size() || anchors.size() != negatives.size())
        throw ContractError("triplet batches differ in size");
    double total = 0.0;
    for (std::size_t i = 0; i < anchors.size(); ++i) total += triplet_hinge(anchors[i], positives[i], negatives[i], alpha);
    return total;
}

double loss_recon_triplet(const ImageCodec& model, std::span<const BatchItem> batch, const SsimMetric& metric,
                          LossMode mode) {
    double total = 0.0;
    for (const auto& item : batch) {
        if (!item.has_triplet()) throw ContractError("triplet reconstruction loss needs positive and negative members");
        const ImagePair members[3] = {item.anchor, *item.positive, *item.negative};
        total += loss_recon_pair(model, members, metric, mode);
    }
    return total;
}

LossBreakdown batch_loss(const EncoderDecoder& model, std::span<const BatchItem> batch, const TrainConfig& config,
                         const SsimMetric& metric, Rng* noise, nn::Gradients* grads) {
    const bool triplet_model = model.variant() == Variant::tae;
    std::vector<const Image*> inputs, targets;
    struct TripletIndex {
        std::size_t anchor, positive, negative;
    };
    std::vector<TripletIndex> triplets;
    for (const auto& item : batch) {
        if ((item.positive || item.negative) && !triplet_model)
            throw ContractError("triplet members given to a " + std::string(to_string(model.variant())) + " model");
        inputs.push_back(item.anchor.input);
        targets.push_back(item.anchor.target);
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!batch[i].has_triplet()) continue;
        const std::size_t p = inputs.size();
        inputs.push_back(batch[i].positive->input);
        targets.push_back(batch[i].positive->target);
        inputs.push_back(batch[i].negative->input);
        targets.push_back(batch[i].negative->target);
        triplets.push_back({i, p, p + 1});
    }
    if (config.loss == LossMode::vanilla) targets = inputs;
    if (inputs.empty()) return {};

    const auto pass = model.forward(inputs, model.variant() == Variant::vae ? noise : nullptr);
    const int n = pass.output.n, d = model.latent_dim();
    LossBreakdown loss;

    nn::Tensor d_output(pass.output.n, pass.output.c, pass.output.h, pass.output.w);
    Image grad;
    for (int i = 0; i < n; ++i) {
        const Image recon = image_from_tensor(pass.output, i);
        if (!recon.same_shape(*targets[i])) throw ContractError("reconstruction and target differ in shape");
        loss.recon += metric.distance_with_gradient(recon, *targets[i], grad);
        float* dst = d_output.sample(i);
        const auto g = grad.values();
        for (std::size_t k = 0; k < g.size(); ++k) dst[k] = static_cast<float>(g[k]);
    }

    nn::Tensor d_z(n, d, 1, 1);
    for (const auto& t : triplets) {
        const std::span<const float> za(pass.z.sample(int(t.anchor)), d);
        const std::span<const float> zp(pass.z.sample(int(t.positive)), d);
        const std::span<const float> zn(pass.z.sample(int(t.negative)), d);
        const double h = triplet_hinge(za, zp, zn, config.margin);
        if (h <= 0.0) continue;
        loss.triplet += h;
        float* ga = d_z.sample(int(t.anchor));
        float* gp = d_z.sample(int(t.positive));
        float* gn = d_z.sample(int(t.negative));
        for (int k = 0; k < d; ++k) {
            ga[k] += 2.0f * (zn[k] - zp[k]);
            gp[k] += 2.0f * (zp[k] - za[k]);
            gn[k] += 2.0f * (za[k] - zn[k]);
        }
    }

    double kl_weight = 0.0;
    nn::Tensor d_head;
    if (model.variant() == Variant::vae) {
        kl_weight = config.kl_weight;
        d_head = nn::Tensor(n, 2 * d, 1, 1);
        for (int i = 0; i < n; ++i) {
            const float* head = pass.head.sample(i);
            LatentCode code;
            code.mu.assign(head, head + d);
            code.logvar.assign(head + d, head + 2 * d);
            loss.kl += kl_divergence(code);
            float* g = d_head.sample(i);
            for (int k = 0; k < d; ++k) {
                g[k] = static_cast<float>(kl_weight * head[k]);
                g[d + k] = static_cast<float>(kl_weight * 0.5 * (std::exp(double(head[d + k])) - 1.0));
            }
        }
    }
    loss.total = loss.recon + loss.triplet + kl_weight * loss.kl;

    if (grads)
        model.backward(pass, d_output, triplets.empty() ? nullptr : &d_z, d_head.size() ? &d_head : nullptr, *grads);
    return loss;
}

LossBreakdown total_loss(const EncoderDecoder& model, std::span<const BatchItem> batch, const TrainConfig& config,
                         Rng* noise) {
    const SsimMetric metric(config.ssim);
    return batch_loss(model, batch, config, metric, noise, nullptr);
}

namespace {

Rng stream_rng(std::uint64_t seed, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
    return Rng(seq);
}

class MemberSampler {
public:
    MemberSampler(const TrainConfig& config) : config_(config) {
        if (config.augment_mode != "none") {
            augment_ = AugmentSpec::parse(config.augment_spec);
            mode_ = parse_augment_mode(config.augment_mode);
        }
    }

    void reset() { scratch_.clear(); }

    ImagePair draw(const SceneRecord& scene, Rng& rng) {
        if (augment_) {
            std::uniform_int_distribution<int> pick(0, scene.variant_count() - 1);
            auto [a, b] = augment_pair(scene.variants[pick(rng)], *augment_, mode_, rng);
            const Image* input = &scratch_.emplace_back(std::move(a));
            const Image* target = &scratch_.emplace_back(std::move(b));
            return {input, config_.loss == LossMode::vanilla ? input : target};
        }
        if (config_.loss == LossMode::vanilla) {
            if (scene.variants.empty()) throw ContractError("scene " + std::to_string(scene.scene_id) + " has no images");
            std::uniform_int_distribution<int> pick(0, scene.variant_count() - 1);
            const Image* x = &scene.variants[pick(rng)];
            return {x, x};
        }
        const PairSample pair = sample_pair(scene, rng);
        return {&scene.variants[pair.input_variant], &scene.variants[pair.target_variant]};
    }

private:
    const TrainConfig& config_;
    std::optional<AugmentSpec> augment_;
    AugmentMode mode_ = AugmentMode::both;
    std::deque<Image> scratch_;
};

std::string describe_loss(const LossBreakdown& l) {
    std::ostringstream out;
    out << "L_R=" << l.recon << " L_T=" << l.triplet << " KL=" << l.kl << " total=" << l.total;
    return out.str();
}

bool finite(const LossBreakdown& l) {
    return std::isfinite(l.recon) && std::isfinite(l.triplet) && std::isfinite(l.kl) && std::isfinite(l.total);
}

}  // namespace

TrainHistory train_model(EncoderDecoder& model, const DatasetManifest& manifest, const TrainConfig& config,
                         const EpochObserver& observer) {
    config.validate();
    const ArchConfig& arch = model.arch();
    if (manifest.scenes.empty()) throw ContractError("training manifest has no scenes");
    if (manifest.meta.height != arch.height || manifest.meta.width != arch.width ||
        manifest.meta.channels != arch.channels)
        throw ContractError("dataset image shape does not match the architecture input");

    const SsimMetric metric(config.ssim);
    const TripletPolicy policy = TripletPolicy::by_name(config.policy);
    const bool triplets = arch.variant == Variant::tae;
    std::vector<char> anchorable(manifest.scenes.size(), 0);
    if (triplets)
        for (std::size_t i = 0; i < manifest.scenes.size(); ++i)
            anchorable[i] = can_anchor(manifest, manifest.scenes[i].scene_id, policy);

    Rng sampling = stream_rng(config.seed, 1);
    Rng noise = stream_rng(config.seed, 2);
    nn::Adam optimizer(config.learning_rate, config.beta1, config.beta2);
    auto params = model.parameters();
    nn::Gradients grads = model.zero_gradients();
    MemberSampler members(config);

    TrainHistory history;
    std::vector<std::size_t> order(manifest.scenes.size());
    std::vector<BatchItem> batch;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), sampling);
        EpochRecord record;
        record.epoch = epoch;
        int step = 0;
        for (std::size_t first = 0; first < order.size(); first += config.batch_size, ++step) {
            const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(config.batch_size));
            members.reset();
            batch.clear();
            for (std::size_t k = first; k < last; ++k) {
                const SceneRecord& scene = manifest.scenes[order[k]];
                BatchItem item;
                item.anchor = members.draw(scene, sampling);
                if (anchorable[order[k]]) {
                    const auto [pos, neg] = sample_triplet_scenes(manifest, scene.scene_id, policy, sampling);
                    item.positive = members.draw(manifest.scene(pos), sampling);
                    item.negative = members.draw(manifest.scene(neg), sampling);
                }
                batch.push_back(item);
            }
            for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0f);
            const LossBreakdown loss = batch_loss(model, batch, config, metric, &noise, &grads);
            if (!finite(loss))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + ": " + describe_loss(loss));
            optimizer.step(params, grads);
            history.steps.push_back({epoch, step, loss});
            record.loss += loss;
        }
        record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        history.epochs.push_back(record);
        if (observer) observer(record);
    }
    return history;
}

TrainResult train(const DatasetManifest& manifest, const ArchConfig& arch, const TrainConfig& config,
                  const EpochObserver& observer) {
    config.validate();
    arch.validate();
    EncoderDecoder model(arch, config.seed);
    TrainResult result;
    result.history = train_model(model, manifest, config, observer);
    json info{{"config", config.to_json()}, {"epochs_completed", result.history.epochs.size()}};
    if (!result.history.epochs.empty()) {
        const auto& last = result.history.epochs.back().loss;
        info["final_loss"] = {{"recon", last.recon}, {"triplet", last.triplet}, {"kl", last.kl}, {"total", last.total}};
    }
    result.checkpoint = Checkpoint::capture(model, config.seed, std::move(info));
    return result;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "epoch,recon,triplet,kl,total\n" << std::setprecision(17);
    for (const auto& e : epochs)
        out << e.epoch << ',' << e.loss.recon << ',' << e.loss.triplet << ',' << e.loss.kl << ',' << e.loss.total << '\n';
}

void TrainHistory::write_steps_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "epoch,step,recon,triplet,kl,total\n" << std::setprecision(17);
    for (const auto& s : steps)
        out << s.epoch << ',' << s.step << ',' << s.loss.recon << ',' << s.loss.triplet << ',' << s.loss.kl << ','
            << s.loss.total << '\n';
}

}  // namespace illuminorm
