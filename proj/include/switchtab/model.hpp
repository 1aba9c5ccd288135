#pragma once

// The SwitchTab network: per-feature tokenizer, pre-norm transformer encoder,
// salient/mutual projectors, shared decoder, and the two prediction heads.
//
// Tokens: feature j of a sample becomes x_j * W[j,:] + b[j,:] in R^d_model,
// so feature identity is carried by the per-feature embedding and no
// positional encoding is needed. A per-token scalar read-out brings the
// encoder output back to width M, keeping input and output sizes aligned
// with the feature count.
//
// Batch layout: token matrices of all samples are stacked into one
// (B*M) x d_model tensor so the dense projections run as single matmuls;
// attention slices each sample's M tokens back out, keeping samples
// strictly independent.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "switchtab/corruption.hpp"
#include "switchtab/dataset.hpp"
#include "switchtab/error.hpp"
#include "switchtab/preprocess.hpp"
#include "switchtab/rng.hpp"
#include "switchtab/tensor.hpp"

namespace switchtab {

struct ModelConfig {
    std::size_t feature_dim = 0;  // M
    std::size_t d_model = 32;
    std::size_t n_layers = 3;
    std::size_t n_heads = 2;
    std::size_t d_ff = 64;
    std::size_t d_e = 0;  // 0 means: match feature_dim
    TaskKind task = TaskKind::none;
    std::size_t n_classes = 0;
    std::size_t head_hidden = 0;  // 0 keeps the prediction head a single affine layer
    std::uint64_t seed = 0;

    std::size_t embed_dim() const { return d_e == 0 ? feature_dim : d_e; }

    std::size_t head_width() const {
        if (task == TaskKind::regression) return 1;
        if (task == TaskKind::binary || task == TaskKind::multiclass) return n_classes;
        return 0;
    }

    void validate() const {
        if (feature_dim == 0) throw DataError("model config: feature_dim must be positive");
        if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0)
            throw DataError("model config: dimensions must be positive");
        if (d_model % n_heads != 0)
            throw DataError("model config: d_model must be divisible by n_heads");
        if ((task == TaskKind::binary || task == TaskKind::multiclass) && n_classes < 2)
            throw DataError("model config: classification needs n_classes >= 2");
    }
};

enum class Head { pretrain, finetune };

struct ForwardOutputs {
    Tensor z1, z2;                  // B x M
    Tensor s1, s2, m1, m2;          // B x d_e
    Tensor recovered1, recovered2;  // B x M, from a sample's own parts
    Tensor switched1, switched2;    // B x M, mutual part taken from the partner
};

class SwitchTabModel {
public:
    SwitchTabModel() = default;
    SwitchTabModel(SwitchTabModel&&) = default;
    SwitchTabModel& operator=(SwitchTabModel&&) = default;
    SwitchTabModel(const SwitchTabModel&) = delete;
    SwitchTabModel& operator=(const SwitchTabModel&) = delete;

    struct Block {
        Tensor ln1_gain, ln1_offset;
        // no key bias: softmax is invariant to per-row constant score shifts,
        // so a key bias would be a dead parameter
        Tensor wq, bq, wk, wv, bv, wo, bo;
        Tensor ln2_gain, ln2_offset;
        Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    };

    static SwitchTabModel init(const ModelConfig& config) {
        config.validate();
        SwitchTabModel model;
        model.config_ = config;
        Rng rng(config.seed);
        const std::size_t m = config.feature_dim;
        const std::size_t d = config.d_model;
        const std::size_t de = config.embed_dim();

        model.tok_w_ = affine_weight(rng, {m, d}, 1, "tokenizer.weight");
        model.tok_b_ = zeros({m, d}, "tokenizer.bias");
        for (std::size_t l = 0; l < config.n_layers; ++l) {
            const std::string p = "block" + std::to_string(l) + ".";
            Block b;
            b.ln1_gain = ones({d}, p + "ln1.gain");
            b.ln1_offset = zeros({d}, p + "ln1.offset");
            b.wq = affine_weight(rng, {d, d}, d, p + "attn.wq");
            b.bq = zeros({d}, p + "attn.bq");
            b.wk = affine_weight(rng, {d, d}, d, p + "attn.wk");
            b.wv = affine_weight(rng, {d, d}, d, p + "attn.wv");
            b.bv = zeros({d}, p + "attn.bv");
            b.wo = affine_weight(rng, {d, d}, d, p + "attn.wo");
            b.bo = zeros({d}, p + "attn.bo");
            b.ln2_gain = ones({d}, p + "ln2.gain");
            b.ln2_offset = zeros({d}, p + "ln2.offset");
            b.ff_w1 = affine_weight(rng, {d, config.d_ff}, d, p + "ff.w1");
            b.ff_b1 = zeros({config.d_ff}, p + "ff.b1");
            b.ff_w2 = affine_weight(rng, {config.d_ff, d}, config.d_ff, p + "ff.w2");
            b.ff_b2 = zeros({d}, p + "ff.b2");
            model.blocks_.push_back(std::move(b));
        }
        model.readout_w_ = affine_weight(rng, {d, 1}, d, "readout.weight");
        model.readout_b_ = zeros({1}, "readout.bias");
        model.ps_w_ = affine_weight(rng, {m, de}, m, "proj_s.weight");
        model.ps_b_ = zeros({de}, "proj_s.bias");
        model.pm_w_ = affine_weight(rng, {m, de}, m, "proj_m.weight");
        model.pm_b_ = zeros({de}, "proj_m.bias");
        model.dec_w_ = affine_weight(rng, {2 * de, m}, 2 * de, "decoder.weight");
        model.dec_b_ = zeros({m}, "decoder.bias");

        const std::size_t hw = config.head_width();
        if (hw > 0) {
            if (config.head_hidden > 0) {
                model.pre_hidden_w_ = affine_weight(rng, {m, config.head_hidden}, m,
                                                    "pretrain_head.hidden_weight");
                model.pre_hidden_b_ = zeros({config.head_hidden}, "pretrain_head.hidden_bias");
                model.pre_w_ = affine_weight(rng, {config.head_hidden, hw}, config.head_hidden,
                                             "pretrain_head.weight");
            } else {
                model.pre_w_ = affine_weight(rng, {m, hw}, m, "pretrain_head.weight");
            }
            model.pre_b_ = zeros({hw}, "pretrain_head.bias");
            model.fin_w_ = affine_weight(rng, {m, hw}, m, "finetune_head.weight");
            model.fin_b_ = zeros({hw}, "finetune_head.bias");
        }
        return model;
    }

    const ModelConfig& config() const { return config_; }

    // ---- forward pieces ---------------------------------------------------

    Tensor encode(const Tensor& x) const {
        if (x.shape().size() != 2 || x.cols() != config_.feature_dim)
            throw DataError("encode: input width must equal the feature dimension");
        const std::size_t batch = x.rows();
        const std::size_t m = config_.feature_dim;
        const std::size_t d = config_.d_model;

        // tokens of all samples stacked into (B*M) x d_model; the per-feature
        // parameters are tiled once per batch
        Tensor xcol = reshape(x, {batch * m, 1});
        Tensor ones_row = Tensor::constant({1, d}, std::vector<double>(d, 1.0));
        Tensor spread = matmul(xcol, ones_row);  // (B*M) x d, x_j in every column
        Tensor tokens = add(multiply(spread, tile_rows(tok_w_, batch)),
                            tile_rows(tok_b_, batch));

        for (const Block& blk : blocks_) tokens = block_forward(blk, tokens, m);

        // per-token scalar read-out, reassembled to B x M
        Tensor zcol = add(matmul(tokens, readout_w_), readout_b_);  // (B*M) x 1
        return reshape(zcol, {batch, m});
    }

    std::pair<Tensor, Tensor> decouple(const Tensor& z) const {
        if (z.shape().size() != 2 || z.cols() != config_.feature_dim)
            throw DataError("decouple: input width must equal the feature dimension");
        Tensor s = sigmoid(add(matmul(z, ps_w_), ps_b_));
        Tensor m = sigmoid(add(matmul(z, pm_w_), pm_b_));
        return {s, m};
    }

    // concatenation order is fixed: mutual first, salient second
    Tensor decode(const Tensor& mutual, const Tensor& salient) const {
        const std::size_t de = config_.embed_dim();
        if (mutual.shape().size() != 2 || mutual.cols() != de || salient.cols() != de)
            throw DataError("decode: parts must have the embedding width");
        if (mutual.rows() != salient.rows())
            throw DataError("decode: batch sizes disagree");
        return sigmoid(add(matmul(concat({mutual, salient}), dec_w_), dec_b_));
    }

    ForwardOutputs forward_pair(const Tensor& x1, const Tensor& x2,
                                bool with_switched = true) const {
        if (x1.rows() != x2.rows()) throw DataError("forward_pair: batch sizes disagree");
        const std::size_t b = x1.rows();
        const std::size_t m = config_.feature_dim;
        // both streams ride through the encoder as one stacked batch; rows
        // are independent, so the split z's match per-stream encodes
        Tensor stacked = reshape(
            concat({reshape(x1, {1, b * m}), reshape(x2, {1, b * m})}), {2 * b, m});
        Tensor z = encode(stacked);
        Tensor zrow = reshape(z, {1, 2 * b * m});
        ForwardOutputs out;
        out.z1 = reshape(slice(zrow, 0, b * m), {b, m});
        out.z2 = reshape(slice(zrow, b * m, b * m), {b, m});
        std::tie(out.s1, out.m1) = decouple(out.z1);
        std::tie(out.s2, out.m2) = decouple(out.z2);
        out.recovered1 = decode(out.m1, out.s1);
        out.recovered2 = decode(out.m2, out.s2);
        if (with_switched) {
            out.switched1 = decode(out.m2, out.s1);
            out.switched2 = decode(out.m1, out.s2);
        }
        return out;
    }

    Tensor predict(const Tensor& z, Head head) const {
        if (config_.head_width() == 0)
            throw DataError("model has no prediction head (no task configured)");
        if (z.shape().size() != 2 || z.cols() != config_.feature_dim)
            throw DataError("predict: input width must equal the feature dimension");
        if (head == Head::pretrain) {
            Tensor h = z;
            if (config_.head_hidden > 0)
                h = relu(add(matmul(h, pre_hidden_w_), pre_hidden_b_));
            return add(matmul(h, pre_w_), pre_b_);
        }
        return add(matmul(z, fin_w_), fin_b_);
    }

    // ---- parameter access ---------------------------------------------------

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out{tok_w_, tok_b_};
        for (const Block& b : blocks_) {
            for (const Tensor& t : {b.ln1_gain, b.ln1_offset, b.wq, b.bq, b.wk, b.wv,
                                    b.bv, b.wo, b.bo, b.ln2_gain, b.ln2_offset, b.ff_w1,
                                    b.ff_b1, b.ff_w2, b.ff_b2})
                out.push_back(t);
        }
        out.push_back(readout_w_);
        out.push_back(readout_b_);
        for (const Tensor& t : {ps_w_, ps_b_, pm_w_, pm_b_, dec_w_, dec_b_}) out.push_back(t);
        if (config_.head_width() > 0) {
            if (config_.head_hidden > 0) {
                out.push_back(pre_hidden_w_);
                out.push_back(pre_hidden_b_);
            }
            out.push_back(pre_w_);
            out.push_back(pre_b_);
            out.push_back(fin_w_);
            out.push_back(fin_b_);
        }
        return out;
    }

    std::vector<Tensor> encoder_parameters() const {
        std::vector<Tensor> out{tok_w_, tok_b_};
        for (const Block& b : blocks_) {
            for (const Tensor& t : {b.ln1_gain, b.ln1_offset, b.wq, b.bq, b.wk, b.wv,
                                    b.bv, b.wo, b.bo, b.ln2_gain, b.ln2_offset, b.ff_w1,
                                    b.ff_b1, b.ff_w2, b.ff_b2})
                out.push_back(t);
        }
        out.push_back(readout_w_);
        out.push_back(readout_b_);
        return out;
    }

    // Algorithm step 7 updates f, p_s, p_m and d; the pretrain head joins when
    // label-assisted pre-training contributes its loss term.
    std::vector<Tensor> pretrain_parameters(bool label_assisted) const {
        std::vector<Tensor> out = encoder_parameters();
        for (const Tensor& t : {ps_w_, ps_b_, pm_w_, pm_b_, dec_w_, dec_b_}) out.push_back(t);
        if (label_assisted) {
            if (config_.head_hidden > 0) {
                out.push_back(pre_hidden_w_);
                out.push_back(pre_hidden_b_);
            }
            out.push_back(pre_w_);
            out.push_back(pre_b_);
        }
        return out;
    }

    std::vector<Tensor> finetune_parameters() const {
        std::vector<Tensor> out = encoder_parameters();
        out.push_back(fin_w_);
        out.push_back(fin_b_);
        return out;
    }

    Tensor parameter(const std::string& name) const {
        for (const Tensor& t : parameters())
            if (t.name() == name) return t;
        throw DataError("unknown parameter: " + name);
    }

    SwitchTabModel clone() const {
        SwitchTabModel copy = init(config_);
        auto src = parameters();
        auto dst = copy.parameters();
        for (std::size_t i = 0; i < src.size(); ++i)
            dst[i].mutable_values() = src[i].values();
        return copy;
    }

private:
    static Tensor affine_weight(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in,
                                std::string name) {
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        std::vector<double> v(detail::shape_numel(shape));
        for (double& x : v) x = rng.uniform(-bound, bound);
        return Tensor::parameter(std::move(shape), std::move(v), std::move(name));
    }

    static Tensor zeros(std::vector<std::size_t> shape, std::string name) {
        return Tensor::parameter(shape, std::vector<double>(detail::shape_numel(shape), 0.0),
                                 std::move(name));
    }

    static Tensor ones(std::vector<std::size_t> shape, std::string name) {
        return Tensor::parameter(shape, std::vector<double>(detail::shape_numel(shape), 1.0),
                                 std::move(name));
    }

    // p has M rows; stack `copies` of it into (copies*M) rows
    static Tensor tile_rows(const Tensor& p, std::size_t copies) {
        if (copies == 1) return p;
        Tensor pt = transpose(p);
        return transpose(concat(std::vector<Tensor>(copies, pt)));
    }

    Tensor block_forward(const Block& blk, const Tensor& tokens, std::size_t m) const {
        const std::size_t heads = config_.n_heads;
        const std::size_t dh = config_.d_model / heads;
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

        Tensor h = layer_norm(tokens, blk.ln1_gain, blk.ln1_offset);
        Tensor q = add(matmul(h, blk.wq), blk.bq);
        Tensor k = matmul(h, blk.wk);
        Tensor v = add(matmul(h, blk.wv), blk.bv);

        std::vector<Tensor> head_outs;
        head_outs.reserve(heads);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            Tensor qh = slice(q, hd * dh, dh);
            Tensor kh = slice(k, hd * dh, dh);
            Tensor vh = slice(v, hd * dh, dh);
            head_outs.push_back(block_attention(qh, kh, vh, m, inv_sqrt_dh));
        }
        Tensor merged = concat(head_outs);  // (B*M) x d
        Tensor attended = add(tokens, add(matmul(merged, blk.wo), blk.bo));

        Tensor f = layer_norm(attended, blk.ln2_gain, blk.ln2_offset);
        Tensor ff = add(matmul(relu(add(matmul(f, blk.ff_w1), blk.ff_b1)), blk.ff_w2),
                        blk.ff_b2);
        return add(attended, ff);
    }

    ModelConfig config_;
    Tensor tok_w_, tok_b_;
    std::vector<Block> blocks_;
    Tensor readout_w_, readout_b_;
    Tensor ps_w_, ps_b_, pm_w_, pm_b_;
    Tensor dec_w_, dec_b_;
    Tensor pre_hidden_w_, pre_hidden_b_;
    Tensor pre_w_, pre_b_;
    Tensor fin_w_, fin_b_;
};

// Gathers matrix rows into a B x M constant tensor.
inline Tensor batch_tensor(const FeatureMatrix& m, std::span<const std::size_t> rows) {
    std::vector<double> v;
    v.reserve(rows.size() * m.M);
    for (std::size_t r : rows)
        for (std::size_t c = 0; c < m.M; ++c) v.push_back(m.at(r, c));
    return Tensor::constant({rows.size(), m.M}, std::move(v));
}

inline Tensor batch_tensor(const CorruptionResult& c) {
    return Tensor::constant({c.n, c.M}, c.values);
}

}  // namespace switchtab
