#include "mmasr/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

namespace mmasr {

std::string to_string(FusionKind kind) {
    switch (kind) {
        case FusionKind::Unimodal: return "unimodal";
        case FusionKind::ShiftAdapt: return "shift-adapt";
        case FusionKind::EarlyDF: return "early-df";
        case FusionKind::WeightedDF: return "weighted-df";
        case FusionKind::MiddleDF: return "middle-df";
        case FusionKind::HierAttnDF: return "hierattn-df";
    }
    throw ContractError("unknown fusion kind");
}

FusionKind fusion_from_string(const std::string& name) {
    for (auto kind : {FusionKind::Unimodal, FusionKind::ShiftAdapt, FusionKind::EarlyDF,
                      FusionKind::WeightedDF, FusionKind::MiddleDF, FusionKind::HierAttnDF}) {
        if (to_string(kind) == name) return kind;
    }
    throw InputError("unknown fusion kind: " + name);
}

TensorPtr to_tensor(const FeatMatrix& m) {
    return Tensor::from({m.rows, m.cols}, m.data);
}

TensorPtr to_tensor(const std::vector<real_t>& v) { return Tensor::from({v.size()}, v); }

// ---- Vocab -------------------------------------------------------------------

Vocab::Vocab(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.size() < 4 || words_[kPad] != "<pad>" || words_[kBos] != "<bos>" ||
        words_[kEos] != "<eos>" || words_[kUnk] != "<unk>") {
        throw ContractError("vocabulary must start with the reserved tokens");
    }
    for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = i;
    if (index_.size() != words_.size()) throw ContractError("duplicate word in vocabulary");
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& token_sequences) {
    std::set<std::string> unique;
    for (const auto& seq : token_sequences) unique.insert(seq.begin(), seq.end());
    std::vector<std::string> words{"<pad>", "<bos>", "<eos>", "<unk>"};
    for (const auto& w : unique) words.push_back(w);
    return Vocab(std::move(words));
}

std::size_t Vocab::id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(std::size_t id) const {
    if (id >= words_.size()) throw InputError("token id " + std::to_string(id) + " out of range");
    return words_[id];
}

// ---- construction --------------------------------------------------------------

namespace {

TensorPtr uniform_param(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    auto t = Tensor::zeros(std::move(shape), true);
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t->data) v = static_cast<real_t>(rng.uniform(-k, k));
    return t;
}

void quantize_tensor(Tensor& t) {
    for (auto& v : t.data) v = static_cast<real_t>(static_cast<float>(v));
}

}  // namespace

FusionModel FusionModel::init(FusionKind kind, const ModelConfig& config, Vocab vocab,
                              std::uint64_t seed) {
    Rng rng(seed);
    FusionModel m;
    m.kind = kind;
    m.config = config;
    m.vocab = std::move(vocab);

    const std::size_t V = m.vocab.size();
    const std::size_t e = config.enc_state_dim();

    m.embedding = uniform_param({V, config.emb_dim}, config.emb_dim, rng);
    std::size_t in_dim = config.feat_dim;
    for (std::size_t l = 0; l < config.enc_layers; ++l) {
        m.encoder.push_back(BiLstmLayer::init(in_dim, config.enc_hidden, rng));
        in_dim = e;
    }
    m.gru1 = GruCellParams::init(config.emb_dim, config.dec_hidden, rng);
    m.attention = AttentionParams::init(config.attn_dim, e, config.dec_hidden, rng);
    m.gru2 = GruCellParams::init(e, config.dec_hidden, rng);
    m.out_proj = uniform_param({V, config.dec_hidden}, config.dec_hidden, rng);

    const std::size_t vp = config.visual_proj_dim;
    switch (kind) {
        case FusionKind::Unimodal:
            break;
        case FusionKind::ShiftAdapt:
            m.shift_w = uniform_param({config.feat_dim, config.visual_dim}, config.visual_dim, rng);
            m.shift_b = Tensor::zeros({config.feat_dim}, true);
            break;
        case FusionKind::EarlyDF:
            m.visual_proj = uniform_param({vp, config.visual_dim}, config.visual_dim, rng);
            m.fusion_proj =
                uniform_param({config.emb_dim, config.emb_dim + vp}, config.emb_dim + vp, rng);
            break;
        case FusionKind::WeightedDF:
            m.visual_proj = uniform_param({vp, config.visual_dim}, config.visual_dim, rng);
            m.weighted_proj = uniform_param({config.emb_dim, vp}, vp, rng);
            m.fusion_proj =
                uniform_param({config.emb_dim, 2 * config.emb_dim}, 2 * config.emb_dim, rng);
            break;
        case FusionKind::MiddleDF:
            m.visual_proj = uniform_param({vp, config.visual_dim}, config.visual_dim, rng);
            m.fusion_proj = uniform_param({e, e + vp}, e + vp, rng);
            break;
        case FusionKind::HierAttnDF:
            m.visual_proj = uniform_param({vp, config.visual_dim}, config.visual_dim, rng);
            m.hier_proj = uniform_param({e, vp}, vp, rng);
            m.hier_attention =
                AttentionParams::init(config.hier_attn_dim, e, config.dec_hidden, rng);
            break;
    }
    quantize_parameters(m);
    return m;
}

std::vector<TensorPtr> FusionModel::parameters() const {
    std::vector<TensorPtr> out{embedding};
    for (const auto& layer : encoder) {
        auto p = layer.parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    for (const auto& group : {gru1.parameters(), attention.parameters(), gru2.parameters()}) {
        out.insert(out.end(), group.begin(), group.end());
    }
    out.push_back(out_proj);
    for (const auto& t : {shift_w, shift_b, visual_proj, weighted_proj, fusion_proj, hier_proj}) {
        if (t) out.push_back(t);
    }
    if (hier_attention.enc_proj) {
        auto p = hier_attention.parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::size_t FusionModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p->numel();
    return n;
}

void quantize_parameters(FusionModel& model) {
    for (auto& p : model.parameters()) quantize_tensor(*p);
}

DecoderState initial_state(const FusionModel& model) {
    return {Tensor::zeros({model.config.dec_hidden}), Tensor::zeros({model.config.dec_hidden})};
}

// ---- forward passes ------------------------------------------------------------

namespace {

void require_visual(const FusionModel& model, const TensorPtr& visual) {
    if (!model.multimodal()) return;
    if (!visual || visual->rank() != 1 || visual->shape[0] != model.config.visual_dim) {
        throw ContractError("fusion kind " + to_string(model.kind) +
                            " requires a visual vector of dim " +
                            std::to_string(model.config.visual_dim));
    }
}

}  // namespace

TensorPtr encode(Tape& tape, const FusionModel& model, const TensorPtr& frames,
                 const TensorPtr& visual) {
    return encode(tape, model, frames, frames->rows(), visual);
}

TensorPtr encode(Tape& tape, const FusionModel& model, const TensorPtr& frames,
                 std::size_t n_valid, const TensorPtr& visual) {
    require_visual(model, visual);
    TensorPtr input = frames;
    if (model.kind == FusionKind::ShiftAdapt) {
        auto shift = add(tape, matvec(tape, model.shift_w, visual), model.shift_b);
        input = add(tape, frames, shift);  // the shift vector reaches every timestep
    }
    return bilstm_encoder(tape, model.encoder, input, model.config.subsample_set(), n_valid);
}

StepOutput decode_step(Tape& tape, const FusionModel& model, const TensorPtr& enc_states,
                       const TensorPtr& visual, std::size_t y_prev, const DecoderState& state) {
    if (y_prev >= model.vocab.size()) {
        throw InputError("token id " + std::to_string(y_prev) + " out of vocabulary range " +
                         std::to_string(model.vocab.size()));
    }
    require_visual(model, visual);

    StepOutput out;
    auto y = row(tape, model.embedding, y_prev);
    if (model.kind == FusionKind::EarlyDF) {
        auto vp = matvec(tape, model.visual_proj, visual);
        y = matvec(tape, model.fusion_proj, concat(tape, y, vp));
    } else if (model.kind == FusionKind::WeightedDF) {
        auto vhat = matvec(tape, model.weighted_proj, matvec(tape, model.visual_proj, visual));
        auto lambda = sigmoid(tape, dot(tape, y, vhat));
        out.weighted_lambda = lambda;
        y = matvec(tape, model.fusion_proj, concat(tape, y, scale(tape, lambda, vhat)));
    }

    auto h1 = gru_step(tape, model.gru1, y, state.h1);
    auto attn = mlp_attention(tape, model.attention, enc_states, h1);

    out.audio_weights = attn.weights;
    out.audio_context = attn.context;

    TensorPtr z = attn.context;
    if (model.kind == FusionKind::MiddleDF) {
        auto vp = matvec(tape, model.visual_proj, visual);
        z = matvec(tape, model.fusion_proj, concat(tape, z, vp));
    } else if (model.kind == FusionKind::HierAttnDF) {
        auto v_e = matvec(tape, model.hier_proj, matvec(tape, model.visual_proj, visual));
        auto items = stack_rows(tape, {z, v_e});
        auto hier = mlp_attention(tape, model.hier_attention, items, h1);
        z = hier.context;
        out.hier_weights = hier.weights;
    }

    auto h2 = gru_step(tape, model.gru2, z, state.h2);
    out.logits = matvec(tape, model.out_proj, h2);
    out.state = {h1, h2};
    return out;
}

LossParts forward_loss_parts(Tape& tape, const FusionModel& model, const TensorPtr& frames,
                             std::size_t n_valid, const TensorPtr& visual,
                             const std::vector<std::size_t>& target) {
    if (target.size() < 2 || target.front() != Vocab::kBos) {
        throw InputError("target must start with <bos> and contain at least one prediction");
    }
    auto enc = encode(tape, model, frames, n_valid, visual);
    DecoderState state = initial_state(model);
    TensorPtr total;
    std::size_t count = 0;
    for (std::size_t t = 0; t + 1 < target.size(); ++t) {
        auto step = decode_step(tape, model, enc, visual, target[t], state);
        state = step.state;
        if (target[t + 1] == Vocab::kPad) continue;
        auto nll = cross_entropy(tape, step.logits, target[t + 1]);
        total = total ? add(tape, total, nll) : nll;
        ++count;
    }
    if (!total) throw InputError("target contains no non-pad predictions");
    return {total, count};
}

TensorPtr forward_loss(Tape& tape, const FusionModel& model, const TensorPtr& frames,
                       std::size_t n_valid, const TensorPtr& visual,
                       const std::vector<std::size_t>& target) {
    auto parts = forward_loss_parts(tape, model, frames, n_valid, visual, target);
    return cmul(tape, parts.nll_sum, real_t(1) / static_cast<real_t>(parts.tokens));
}

namespace {

double log_softmax_at(const std::vector<real_t>& logits, std::size_t index) {
    real_t mx = logits[0];
    for (real_t v : logits) mx = std::max(mx, v);
    double denom = 0;
    for (real_t v : logits) denom += std::exp(static_cast<double>(v - mx));
    return static_cast<double>(logits[index] - mx) - std::log(denom);
}

}  // namespace

DecodeResult greedy_decode(const FusionModel& model, const FeatMatrix& frames,
                           const std::vector<real_t>& visual, std::size_t max_len) {
    if (max_len < 1) throw InputError("greedy_decode requires max_len >= 1");
    Tape tape(false);
    auto frames_t = to_tensor(frames);
    auto visual_t = model.multimodal() ? to_tensor(visual) : nullptr;
    auto enc = encode(tape, model, frames_t, visual_t);

    DecodeResult result;
    result.hierarchical = model.kind == FusionKind::HierAttnDF;
    DecoderState state = initial_state(model);
    std::size_t y_prev = Vocab::kBos;
    for (std::size_t t = 0; t < max_len; ++t) {
        auto step = decode_step(tape, model, enc, visual_t, y_prev, state);
        state = step.state;
        const auto& logits = step.logits->data;
        std::size_t best = 0;
        for (std::size_t i = 1; i < logits.size(); ++i)
            if (logits[i] > logits[best]) best = i;
        if (best == Vocab::kEos) break;

        StepTrace trace;
        trace.token = best;
        trace.log_prob = log_softmax_at(logits, best);
        trace.audio_weights = step.audio_weights->data;
        trace.audio_context = step.audio_context->data;
        if (step.hier_weights) {
            trace.audio_w = static_cast<double>(step.hier_weights->data[0]);
            trace.visual_w = static_cast<double>(step.hier_weights->data[1]);
        }
        result.tokens.push_back(best);
        result.steps.push_back(std::move(trace));
        y_prev = best;
    }
    return result;
}

// ---- checkpoints ----------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'M', 'M', 'A', 'S', 'R', 'C', 'K', '1'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw FormatError("truncated checkpoint: " + path);
    return v;
}

void put_string(std::ofstream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& in, const std::string& path) {
    const std::uint32_t n = get_u32(in, path);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw FormatError("truncated checkpoint: " + path);
    return s;
}

}  // namespace

void save_checkpoint(const FusionModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    put_u32(out, kCkptVersion);
    put_u32(out, static_cast<std::uint32_t>(model.kind));

    const auto& c = model.config;
    for (std::size_t v : {c.feat_dim, c.enc_hidden, c.enc_layers, c.subsample_layers.size()})
        put_u32(out, static_cast<std::uint32_t>(v));
    for (std::size_t l : c.subsample_layers) put_u32(out, static_cast<std::uint32_t>(l));
    for (std::size_t v : {c.emb_dim, c.dec_hidden, c.attn_dim, c.visual_dim, c.visual_proj_dim,
                          c.hier_attn_dim})
        put_u32(out, static_cast<std::uint32_t>(v));

    put_u32(out, static_cast<std::uint32_t>(model.vocab.size()));
    for (const auto& w : model.vocab.words()) put_string(out, w);

    for (const auto& p : model.parameters()) {
        put_u32(out, static_cast<std::uint32_t>(p->rank()));
        for (std::size_t d : p->shape) put_u32(out, static_cast<std::uint32_t>(d));
        std::vector<float> payload(p->numel());
        for (std::size_t i = 0; i < p->numel(); ++i) payload[i] = static_cast<float>(p->data[i]);
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size() * sizeof(float)));
    }
    if (!out) throw IoError("short write to checkpoint: " + path);
}

FusionModel load_checkpoint(const std::string& path, std::optional<FusionKind> expected_kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing checkpoint: " + path);
    char magic[8] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(kCkptMagic)) != 0) {
        throw FormatError("bad checkpoint magic in " + path);
    }
    const std::uint32_t version = get_u32(in, path);
    if (version != kCkptVersion) {
        throw FormatError("checkpoint version mismatch in " + path + ": expected " +
                          std::to_string(kCkptVersion) + ", found " + std::to_string(version));
    }
    const auto kind = static_cast<FusionKind>(get_u32(in, path));
    if (kind > FusionKind::HierAttnDF) {
        throw FormatError("unknown fusion kind id in " + path);
    }
    if (expected_kind && kind != *expected_kind) {
        throw FormatError("checkpoint fusion kind mismatch in " + path + ": expected " +
                          to_string(*expected_kind) + ", found " + to_string(kind));
    }

    ModelConfig c;
    c.feat_dim = get_u32(in, path);
    c.enc_hidden = get_u32(in, path);
    c.enc_layers = get_u32(in, path);
    const std::uint32_t n_sub = get_u32(in, path);
    c.subsample_layers.clear();
    for (std::uint32_t i = 0; i < n_sub; ++i) c.subsample_layers.push_back(get_u32(in, path));
    c.emb_dim = get_u32(in, path);
    c.dec_hidden = get_u32(in, path);
    c.attn_dim = get_u32(in, path);
    c.visual_dim = get_u32(in, path);
    c.visual_proj_dim = get_u32(in, path);
    c.hier_attn_dim = get_u32(in, path);

    const std::uint32_t vocab_size = get_u32(in, path);
    std::vector<std::string> words;
    words.reserve(vocab_size);
    for (std::uint32_t i = 0; i < vocab_size; ++i) words.push_back(get_string(in, path));

    FusionModel model = FusionModel::init(kind, c, Vocab(std::move(words)), 0);
    for (const auto& p : model.parameters()) {
        const std::uint32_t rank = get_u32(in, path);
        std::vector<std::size_t> shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get_u32(in, path));
        if (shape != p->shape) {
            throw FormatError("checkpoint blob shape mismatch in " + path + ": expected " +
                              shape_str(p->shape) + ", found " + shape_str(shape));
        }
        std::vector<float> payload(p->numel());
        in.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * sizeof(float)));
        if (!in) throw FormatError("truncated checkpoint: " + path);
        for (std::size_t i = 0; i < p->numel(); ++i) p->data[i] = payload[i];
    }
    char extra = 0;
    if (in.read(&extra, 1)) {
        throw FormatError("trailing bytes after parameter blobs in " + path);
    }
    return model;
}

}  // namespace mmasr
