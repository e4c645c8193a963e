#include "illuminorm/model.hpp"

#include "illuminorm/errors.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace illuminorm {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::ae: return "ae";
        case Variant::vae: return "vae";
        case Variant::tae: return "tae";
    }
    return "?";
}

Variant parse_variant(std::string_view text) {
    if (text == "ae" || text == "AE") return Variant::ae;
    if (text == "vae" || text == "VAE") return Variant::vae;
    if (text == "tae" || text == "TAE") return Variant::tae;
    throw ConfigError("unknown model variant '" + std::string(text) + "' (expected ae, vae or tae)");
}

void ArchConfig::validate() const {
    if (height < 1 || width < 1 || channels < 1) throw ConfigError("input shape must be positive");
    if (widths.empty()) throw ConfigError("architecture needs at least one stage");
    for (int w : widths)
        if (w < 1) throw ConfigError("stage widths must be positive");
    const int factor = 1 << stages();
    if (height % factor || width % factor)
        throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) + " is not divisible by 2^" +
                          std::to_string(stages()));
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
}

json ArchConfig::to_json() const {
    return json{{"height", height},         {"width", width},
                {"channels", channels},     {"widths", widths},
                {"latent_dim", latent_dim}, {"variant", std::string(illuminorm::to_string(variant))}};
}

ArchConfig ArchConfig::from_json(const json& j) {
    ArchConfig a;
    a.height = j.at("height").get<int>();
    a.width = j.at("width").get<int>();
    a.channels = j.at("channels").get<int>();
    a.widths = j.at("widths").get<std::vector<int>>();
    a.latent_dim = j.at("latent_dim").get<int>();
    a.variant = parse_variant(j.at("variant").get<std::string>());
    a.validate();
    return a;
}

double kl_divergence(const LatentCode& code) {
    if (!code.variational()) throw ContractError("KL divergence needs a variational code (mu, log sigma^2)");
    if (code.mu.size() != code.logvar.size()) throw ContractError("mu and log sigma^2 differ in length");
    double kl = 0.0;
    for (std::size_t i = 0; i < code.mu.size(); ++i) {
        const double mu = code.mu[i], lv = code.logvar[i];
        kl += mu * mu + std::exp(lv) - lv - 1.0;
    }
    return 0.5 * kl;
}

Image ImageCodec::reconstruct(const Image& x) const { return decode(embed(x)); }

std::vector<std::vector<float>> ImageCodec::embed_batch(const std::vector<const Image*>& xs) const {
    std::vector<std::vector<float>> out;
    out.reserve(xs.size());
    for (const Image* x : xs) out.push_back(embed(*x));
    return out;
}

std::vector<Image> ImageCodec::reconstruct_batch(const std::vector<const Image*>& xs) const {
    std::vector<Image> out;
    out.reserve(xs.size());
    for (const Image* x : xs) out.push_back(reconstruct(*x));
    return out;
}

nn::Tensor to_tensor(const std::vector<const Image*>& images) {
    if (images.empty()) throw ContractError("empty image batch");
    const Image& first = *images.front();
    nn::Tensor t(static_cast<int>(images.size()), first.channels(), first.height(), first.width());
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!images[i]->same_shape(first)) throw ContractError("images in a batch differ in shape");
        const auto values = images[i]->values();
        float* dst = t.sample(static_cast<int>(i));
        for (std::size_t k = 0; k < values.size(); ++k) dst[k] = static_cast<float>(values[k]);
    }
    return t;
}

Image image_from_tensor(const nn::Tensor& t, int index) {
    Image img(t.h, t.w, t.c);
    const float* src = t.sample(index);
    auto dst = img.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = src[k];
    return img;
}

EncoderDecoder::EncoderDecoder(ArchConfig arch, std::uint64_t init_seed) : arch_(std::move(arch)) {
    arch_.validate();
    std::mt19937_64 rng(init_seed);
    const double relu_gain = std::sqrt(2.0);
    const int d = arch_.latent_dim;
    const int bh = arch_.bottleneck_height(), bw = arch_.bottleneck_width();
    const int last = arch_.widths.back();
    const int features = last * bh * bw;

    int in = arch_.channels;
    for (int s = 0; s < arch_.stages(); ++s) {
        const std::string name = "encoder.stage" + std::to_string(s) + ".conv";
        encoder_.add(std::make_unique<nn::Conv3x3>(name, in, arch_.widths[s], relu_gain, rng));
        encoder_.add(std::make_unique<nn::Relu>());
        encoder_.add(std::make_unique<nn::MaxPool2>());
        in = arch_.widths[s];
    }
    const int head = arch_.variant == Variant::vae ? 2 * d : d;
    encoder_.add(std::make_unique<nn::Linear>("encoder.head", features, head, 1.0, rng));

    decoder_.add(std::make_unique<nn::Linear>("decoder.input", d, features, relu_gain, rng));
    decoder_.add(std::make_unique<nn::Relu>());
    decoder_.add(std::make_unique<nn::Reshape>(last, bh, bw));
    for (int s = arch_.stages() - 1; s >= 0; --s) {
        const int out = s > 0 ? arch_.widths[s - 1] : arch_.widths[0];
        const std::string name = "decoder.stage" + std::to_string(s) + ".conv";
        decoder_.add(std::make_unique<nn::Upsample2>());
        decoder_.add(std::make_unique<nn::Conv3x3>(name, arch_.widths[s], out, relu_gain, rng));
        decoder_.add(std::make_unique<nn::Relu>());
    }
    decoder_.add(std::make_unique<nn::Conv3x3>("decoder.output", arch_.widths[0], arch_.channels, 1.0, rng));
    decoder_.add(std::make_unique<nn::Sigmoid>());
}

LatentCode EncoderDecoder::code_from_head(const float* head, const float* eps) const {
    const int d = arch_.latent_dim;
    LatentCode code;
    if (arch_.variant != Variant::vae) {
        code.z.assign(head, head + d);
        return code;
    }
    code.mu.assign(head, head + d);
    code.logvar.assign(head + d, head + 2 * d);
    code.z.resize(d);
    for (int i = 0; i < d; ++i) code.z[i] = code.mu[i] + std::exp(0.5f * code.logvar[i]) * (eps ? eps[i] : 0.0f);
    return code;
}

namespace {

void check_input(const ArchConfig& arch, const Image& x) {
    if (x.height() != arch.height || x.width() != arch.width || x.channels() != arch.channels)
        throw ContractError("input image " + std::to_string(x.height()) + "x" + std::to_string(x.width()) + "x" +
                            std::to_string(x.channels()) + " does not match the model input " +
                            std::to_string(arch.height) + "x" + std::to_string(arch.width) + "x" +
                            std::to_string(arch.channels));
}

}  // namespace

LatentCode EncoderDecoder::encode(const Image& x, Rng* noise) const {
    check_input(arch_, x);
    const nn::Tensor head = encoder_.forward(to_tensor({&x}), nullptr);
    if (arch_.variant == Variant::vae && noise) {
        std::normal_distribution<float> normal(0.0f, 1.0f);
        std::vector<float> eps(arch_.latent_dim);
        for (float& e : eps) e = normal(*noise);
        return code_from_head(head.data.data(), eps.data());
    }
    return code_from_head(head.data.data(), nullptr);
}

LatentCode EncoderDecoder::encode(const Image& x, std::span<const float> eps) const {
    check_input(arch_, x);
    if (static_cast<int>(eps.size()) != arch_.latent_dim) throw ContractError("noise length must equal latent_dim");
    const nn::Tensor head = encoder_.forward(to_tensor({&x}), nullptr);
    return code_from_head(head.data.data(), eps.data());
}

Image EncoderDecoder::decode(std::span<const float> z) const {
    if (static_cast<int>(z.size()) != arch_.latent_dim)
        throw ContractError("latent code has length " + std::to_string(z.size()) + ", model expects " +
                            std::to_string(arch_.latent_dim));
    nn::Tensor t(1, arch_.latent_dim, 1, 1);
    std::copy(z.begin(), z.end(), t.data.begin());
    return image_from_tensor(decoder_.forward(t, nullptr), 0);
}

std::vector<float> EncoderDecoder::embed(const Image& x) const {
    LatentCode code = encode(x, static_cast<Rng*>(nullptr));
    return code.variational() ? code.mu : code.z;
}

std::vector<std::vector<float>> EncoderDecoder::embed_batch(const std::vector<const Image*>& xs) const {
    constexpr std::size_t kChunk = 64;
    std::vector<std::vector<float>> out;
    out.reserve(xs.size());
    const int d = arch_.latent_dim;
    const int stride = arch_.variant == Variant::vae ? 2 * d : d;
    for (std::size_t start = 0; start < xs.size(); start += kChunk) {
        std::vector<const Image*> chunk(xs.begin() + start, xs.begin() + std::min(xs.size(), start + kChunk));
        for (const Image* x : chunk) check_input(arch_, *x);
        const nn::Tensor head = encoder_.forward(to_tensor(chunk), nullptr);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const float* h = head.data.data() + i * stride;
            out.emplace_back(h, h + d);  // z, or mu for a VAE
        }
    }
    return out;
}

std::vector<Image> EncoderDecoder::reconstruct_batch(const std::vector<const Image*>& xs) const {
    constexpr std::size_t kChunk = 64;
    const auto codes = embed_batch(xs);
    std::vector<Image> out;
    out.reserve(xs.size());
    const int d = arch_.latent_dim;
    for (std::size_t start = 0; start < codes.size(); start += kChunk) {
        const std::size_t count = std::min(codes.size() - start, kChunk);
        nn::Tensor z(static_cast<int>(count), d, 1, 1);
        for (std::size_t i = 0; i < count; ++i) std::copy(codes[start + i].begin(), codes[start + i].end(), z.sample(int(i)));
        const nn::Tensor images = decoder_.forward(z, nullptr);
        for (std::size_t i = 0; i < count; ++i) out.push_back(image_from_tensor(images, static_cast<int>(i)));
    }
    return out;
}

EncoderDecoder::BatchPass EncoderDecoder::forward(const std::vector<const Image*>& xs, Rng* noise) const {
    for (const Image* x : xs) check_input(arch_, *x);
    BatchPass pass;
    pass.input = to_tensor(xs);
    pass.head = encoder_.forward(pass.input, &pass.encoder_cache);
    const int n = pass.input.n, d = arch_.latent_dim;
    pass.z = nn::Tensor(n, d, 1, 1);
    if (arch_.variant == Variant::vae) {
        pass.eps = nn::Tensor(n, d, 1, 1);
        if (noise) {
            std::normal_distribution<float> normal(0.0f, 1.0f);
            for (float& e : pass.eps.data) e = normal(*noise);
        }
        for (int i = 0; i < n; ++i) {
            const LatentCode code = code_from_head(pass.head.sample(i), pass.eps.sample(i));
            std::copy(code.z.begin(), code.z.end(), pass.z.sample(i));
        }
    } else {
        pass.z.data = pass.head.data;
    }
    pass.output = decoder_.forward(pass.z, &pass.decoder_cache);
    return pass;
}

void EncoderDecoder::backward(const BatchPass& pass, const nn::Tensor& d_output, const nn::Tensor* d_z,
                              const nn::Tensor* d_head, nn::Gradients& grads) const {
    if (!d_output.same_shape(pass.output)) throw ContractError("output gradient shape mismatch");
    const std::size_t n_enc = encoder_.parameter_count();
    std::span<std::vector<float>> all(grads);
    nn::Tensor dz = decoder_.backward(d_output, pass.decoder_cache, all.subspan(n_enc));
    dz.c = arch_.latent_dim;
    dz.h = dz.w = 1;
    if (d_z) {
        if (d_z->size() != dz.size()) throw ContractError("latent gradient shape mismatch");
        for (std::size_t i = 0; i < dz.size(); ++i) dz.data[i] += d_z->data[i];
    }
    nn::Tensor dh(pass.head.n, pass.head.c, 1, 1);
    const int n = pass.head.n, d = arch_.latent_dim;
    if (arch_.variant == Variant::vae) {
        for (int i = 0; i < n; ++i) {
            const float* head = pass.head.sample(i);
            const float* eps = pass.eps.sample(i);
            const float* g = dz.sample(i);
            float* out = dh.sample(i);
            for (int k = 0; k < d; ++k) {
                out[k] = g[k];
                out[d + k] = g[k] * 0.5f * std::exp(0.5f * head[d + k]) * eps[k];
            }
        }
    } else {
        dh.data = dz.data;
    }
    if (d_head) {
        if (d_head->size() != dh.size()) throw ContractError("head gradient shape mismatch");
        for (std::size_t i = 0; i < dh.size(); ++i) dh.data[i] += d_head->data[i];
    }
    encoder_.backward(dh, pass.encoder_cache, all.subspan(0, n_enc));
}

std::vector<nn::Parameter*> EncoderDecoder::parameters() {
    auto p = encoder_.parameters();
    auto q = decoder_.parameters();
    p.insert(p.end(), q.begin(), q.end());
    return p;
}

std::vector<const nn::Parameter*> EncoderDecoder::parameters() const {
    auto p = encoder_.parameters();
    auto q = decoder_.parameters();
    p.insert(p.end(), q.begin(), q.end());
    return p;
}

std::size_t EncoderDecoder::weight_count() const {
    std::size_t total = 0;
    for (const auto* p : parameters()) total += p->value.size();
    return total;
}

std::vector<std::string> EncoderDecoder::describe() const {
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < encoder_.size(); ++i) lines.push_back("encoder: " + encoder_.layer(i).describe());
    for (std::size_t i = 0; i < decoder_.size(); ++i) lines.push_back("decoder: " + decoder_.layer(i).describe());
    return lines;
}

namespace {

std::uint64_t fnv1a(std::span<const unsigned char> bytes, std::uint64_t h) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string to_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::span<const unsigned char> raw_bytes(const void* data, std::size_t size) {
    return {static_cast<const unsigned char*>(data), size};
}

std::string weights_fingerprint(const ArchConfig& arch, const std::vector<const std::vector<float>*>& weights) {
    const std::string header = arch.to_json().dump();
    std::uint64_t h = fnv1a(raw_bytes(header.data(), header.size()), 0xcbf29ce484222325ull);
    for (const auto* w : weights) h = fnv1a(raw_bytes(w->data(), w->size() * sizeof(float)), h);
    return to_hex(h);
}

}  // namespace

std::string fnv1a_hex(std::span<const unsigned char> bytes, std::uint64_t seed) { return to_hex(fnv1a(bytes, seed)); }

namespace {

constexpr std::string_view kMagic = "ILLUMINORM-CHECKPOINT";

}  // namespace

std::string EncoderDecoder::fingerprint() const {
    std::vector<const std::vector<float>*> w;
    for (const auto* p : parameters()) w.push_back(&p->value);
    return weights_fingerprint(arch_, w);
}

Checkpoint Checkpoint::capture(const EncoderDecoder& model, std::uint64_t seed, json training) {
    Checkpoint c;
    c.arch = model.arch();
    c.seed = seed;
    c.training = std::move(training);
    for (const auto* p : model.parameters()) {
        c.names.push_back(p->name);
        c.weights.push_back(p->value);
    }
    return c;
}

EncoderDecoder Checkpoint::instantiate() const {
    EncoderDecoder model(arch, seed);
    auto params = model.parameters();
    if (params.size() != weights.size()) throw DataError("checkpoint parameter count does not match its architecture");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->name != names[i] || params[i]->value.size() != weights[i].size())
            throw DataError("checkpoint parameter '" + names[i] + "' does not match the architecture");
        params[i]->value = weights[i];
    }
    return model;
}

std::string Checkpoint::fingerprint() const {
    std::vector<const std::vector<float>*> w;
    for (const auto& v : weights) w.push_back(&v);
    return weights_fingerprint(arch, w);
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    json header{{"version", Checkpoint::kVersion}, {"arch", ckpt.arch.to_json()}, {"seed", ckpt.seed},
                {"training", ckpt.training},       {"fingerprint", ckpt.fingerprint()}};
    json params = json::array();
    for (std::size_t i = 0; i < ckpt.weights.size(); ++i)
        params.push_back({{"name", ckpt.names[i]}, {"count", ckpt.weights[i].size()}});
    header["parameters"] = params;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << kMagic << ' ' << Checkpoint::kVersion << '\n' << header.dump() << '\n';
    for (const auto& w : ckpt.weights)
        out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(float)));
    if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::string magic_line, header_line;
    std::getline(in, magic_line);
    if (magic_line.rfind(kMagic, 0) != 0) throw DataError(path.string() + " is not a checkpoint");
    const int version = std::atoi(magic_line.c_str() + kMagic.size());
    if (version != Checkpoint::kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    std::getline(in, header_line);
    Checkpoint c;
    std::string stored_fingerprint;
    try {
        const json header = json::parse(header_line);
        c.arch = ArchConfig::from_json(header.at("arch"));
        c.seed = header.at("seed").get<std::uint64_t>();
        c.training = header.at("training");
        stored_fingerprint = header.at("fingerprint").get<std::string>();
        for (const auto& p : header.at("parameters")) {
            c.names.push_back(p.at("name").get<std::string>());
            std::vector<float> w(p.at("count").get<std::size_t>());
            in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(float)));
            if (!in) throw DataError("truncated checkpoint " + path.string());
            c.weights.push_back(std::move(w));
        }
    } catch (const json::exception& e) {
        throw DataError("malformed checkpoint header in " + path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw DataError("invalid architecture in " + path.string() + ": " + e.what());
    }
    if (c.fingerprint() != stored_fingerprint) throw DataError("checkpoint " + path.string() + " is corrupted");
    return c;
}

}  // namespace illuminorm
