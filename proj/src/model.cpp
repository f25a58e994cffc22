#include "icegen/model.hpp"

#include "icegen/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace icegen {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kProbFloor = 1e-12;

struct LnCache {
    Mat xhat;
    Eigen::VectorXd rstd;
};

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, LnCache* cache) {
    const auto rows = x.rows();
    const auto d = static_cast<double>(x.cols());
    Mat xhat(rows, x.cols());
    Eigen::VectorXd rstd(rows);
    for (Eigen::Index t = 0; t < rows; ++t) {
        const double mean = x.row(t).sum() / d;
        const double var = (x.row(t).array() - mean).square().sum() / d;
        rstd[t] = 1.0 / std::sqrt(var + kLnEps);
        xhat.row(t) = (x.row(t).array() - mean) * rstd[t];
    }
    Mat y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

Mat layer_norm_backward(const Mat& dy, const LnCache& c, const Mat& gain, Mat& dgain, Mat& dbias) {
    dgain.row(0) += dy.cwiseProduct(c.xhat).colwise().sum();
    dbias.row(0) += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * gain.row(0).array();
    const auto d = static_cast<double>(dy.cols());
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index t = 0; t < dy.rows(); ++t) {
        const double s1 = dxhat.row(t).sum();
        const double s2 = dxhat.row(t).dot(c.xhat.row(t));
        dx.row(t) = (c.rstd[t] / d) * (d * dxhat.row(t).array() - s1 - c.xhat.row(t).array() * s2);
    }
    return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

void softmax_rows(Mat& m) {
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
        const double mx = m.row(t).maxCoeff();
        m.row(t) = (m.row(t).array() - mx).exp();
        m.row(t) /= m.row(t).sum();
    }
}

Eigen::RowVectorXd positional_row(std::size_t pos, std::size_t d) {
    Eigen::RowVectorXd row(static_cast<Eigen::Index>(d));
    for (std::size_t k = 0; k < d; ++k) {
        const double i2 = static_cast<double>(k - k % 2);
        const double angle = static_cast<double>(pos) / std::pow(10000.0, i2 / static_cast<double>(d));
        row[static_cast<Eigen::Index>(k)] = k % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
    return row;
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
    Mat mask(rows, cols);
    const double keep = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < rate ? 0.0 : keep;
    return mask;
}

struct BlockCache {
    LnCache ln1;
    Mat x1, q, k, v;
    std::vector<Mat> attn;  // per head, T x T, zero above the diagonal
    Mat concat;
    Mat drop1;
    LnCache ln2;
    Mat x2, z1, g;
    Mat drop2;
};

struct ForwardCache {
    std::vector<BlockCache> blocks;
    LnCache lnf;
    Mat y;
};

void check_finite(const Mat& m, const std::string& where) {
    if (!m.allFinite()) throw TrainingError("non-finite values in " + where);
}

void validate_tokens(const ModelConfig& cfg, std::span<const Token> tokens) {
    if (tokens.empty()) throw ShapeError("empty token sequence");
    if (tokens.size() > cfg.context)
        throw Error(ErrorKind::Validation, "context error: sequence of " + std::to_string(tokens.size()) +
                                               " exceeds context " + std::to_string(cfg.context));
    for (Token t : tokens) {
        if (t >= cfg.vocab) throw DomainError("token id " + std::to_string(t) + " >= vocabulary " + std::to_string(cfg.vocab));
    }
}

// Returns logits (T x V). Fills `cache` for the backward pass when given.
Mat forward_core(const ModelParams& p, std::span<const Token> tokens, double dropout, Rng* rng, ForwardCache* cache) {
    const auto& cfg = p.config;
    const auto T = static_cast<Eigen::Index>(tokens.size());
    const auto dk = static_cast<Eigen::Index>(cfg.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    Mat h = positional_encoding(tokens.size(), cfg.d_model);
    for (Eigen::Index t = 0; t < T; ++t) h.row(t) += p.embedding.row(tokens[static_cast<std::size_t>(t)]);

    if (cache) cache->blocks.resize(p.blocks.size());
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        const BlockParams& bp = p.blocks[l];
        BlockCache local;
        BlockCache& bc = cache ? cache->blocks[l] : local;

        bc.x1 = layer_norm(h, bp.ln1_gain, bp.ln1_bias, &bc.ln1);
        bc.q = bc.x1 * bp.w_query;
        bc.k = bc.x1 * bp.w_key;
        bc.v = bc.x1 * bp.w_value;
        bc.concat.setZero(T, static_cast<Eigen::Index>(cfg.d_model));
        bc.attn.resize(cfg.heads);
        for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
            const auto col = static_cast<Eigen::Index>(hd) * dk;
            Mat s = (bc.q.middleCols(col, dk) * bc.k.middleCols(col, dk).transpose()) * scale;
            Mat& a = bc.attn[hd];
            a.setZero(T, T);
            for (Eigen::Index i = 0; i < T; ++i) {
                // Causal mask: only keys j <= i take part in the softmax.
                auto row = s.row(i).head(i + 1);
                const double mx = row.maxCoeff();
                a.row(i).head(i + 1) = (row.array() - mx).exp();
                a.row(i).head(i + 1) /= a.row(i).head(i + 1).sum();
            }
            bc.concat.middleCols(col, dk) = a * bc.v.middleCols(col, dk);
        }
        Mat attn_out = bc.concat * bp.w_attn_out;
        if (dropout > 0.0) {
            bc.drop1 = dropout_mask(attn_out.rows(), attn_out.cols(), dropout, *rng);
            attn_out = attn_out.cwiseProduct(bc.drop1);
        }
        Mat u = h + attn_out;

        bc.x2 = layer_norm(u, bp.ln2_gain, bp.ln2_bias, &bc.ln2);
        bc.z1 = (bc.x2 * bp.w_ff1).rowwise() + bp.b_ff1.row(0);
        bc.g = bc.z1.unaryExpr([](double x) { return gelu(x); });
        Mat f = (bc.g * bp.w_ff2).rowwise() + bp.b_ff2.row(0);
        if (dropout > 0.0) {
            bc.drop2 = dropout_mask(f.rows(), f.cols(), dropout, *rng);
            f = f.cwiseProduct(bc.drop2);
        }
        h = u + f;
        check_finite(h, "block " + std::to_string(l) + " output");
    }

    LnCache lnf;
    Mat y = layer_norm(h, p.final_gain, p.final_bias, cache ? &cache->lnf : &lnf);
    Mat logits = y * p.w_output.transpose();
    check_finite(logits, "output logits");
    if (cache) cache->y = std::move(y);
    return logits;
}

void backward_core(const ModelParams& p, std::span<const Token> tokens, const ForwardCache& cache, const Mat& dlogits,
                   ModelParams& grad) {
    const auto& cfg = p.config;
    const auto T = static_cast<Eigen::Index>(tokens.size());
    const auto dk = static_cast<Eigen::Index>(cfg.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    grad.w_output.noalias() += dlogits.transpose() * cache.y;
    Mat dy = dlogits * p.w_output;
    Mat dh = layer_norm_backward(dy, cache.lnf, p.final_gain, grad.final_gain, grad.final_bias);

    for (std::size_t li = p.blocks.size(); li-- > 0;) {
        const BlockParams& bp = p.blocks[li];
        BlockParams& bg = grad.blocks[li];
        const BlockCache& bc = cache.blocks[li];

        // h_out = u + drop2 * ffn(ln2(u))
        Mat df = bc.drop2.size() ? Mat(dh.cwiseProduct(bc.drop2)) : dh;
        bg.w_ff2.noalias() += bc.g.transpose() * df;
        bg.b_ff2.row(0) += df.colwise().sum();
        Mat dz1 = (df * bp.w_ff2.transpose()).cwiseProduct(bc.z1.unaryExpr([](double x) { return gelu_derivative(x); }));
        bg.w_ff1.noalias() += bc.x2.transpose() * dz1;
        bg.b_ff1.row(0) += dz1.colwise().sum();
        Mat dx2 = dz1 * bp.w_ff1.transpose();
        Mat du = dh + layer_norm_backward(dx2, bc.ln2, bp.ln2_gain, bg.ln2_gain, bg.ln2_bias);

        // u = h_in + drop1 * concat(heads) W_O
        Mat dao = bc.drop1.size() ? Mat(du.cwiseProduct(bc.drop1)) : du;
        bg.w_attn_out.noalias() += bc.concat.transpose() * dao;
        Mat dconcat = dao * bp.w_attn_out.transpose();

        Mat dq = Mat::Zero(T, static_cast<Eigen::Index>(cfg.d_model));
        Mat dk_m = Mat::Zero(T, static_cast<Eigen::Index>(cfg.d_model));
        Mat dv = Mat::Zero(T, static_cast<Eigen::Index>(cfg.d_model));
        for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
            const auto col = static_cast<Eigen::Index>(hd) * dk;
            const Mat& a = bc.attn[hd];
            const Mat dout = dconcat.middleCols(col, dk);
            Mat da = dout * bc.v.middleCols(col, dk).transpose();
            dv.middleCols(col, dk) = a.transpose() * dout;
            Mat ds(T, T);
            for (Eigen::Index i = 0; i < T; ++i) {
                const double dot = a.row(i).dot(da.row(i));
                ds.row(i) = a.row(i).array() * (da.row(i).array() - dot);
            }
            dq.middleCols(col, dk) = (ds * bc.k.middleCols(col, dk)) * scale;
            dk_m.middleCols(col, dk) = (ds.transpose() * bc.q.middleCols(col, dk)) * scale;
        }
        bg.w_query.noalias() += bc.x1.transpose() * dq;
        bg.w_key.noalias() += bc.x1.transpose() * dk_m;
        bg.w_value.noalias() += bc.x1.transpose() * dv;
        Mat dx1 = dq * bp.w_query.transpose() + dk_m * bp.w_key.transpose() + dv * bp.w_value.transpose();
        dh = du + layer_norm_backward(dx1, bc.ln1, bp.ln1_gain, bg.ln1_gain, bg.ln1_bias);
    }

    for (Eigen::Index t = 0; t < T; ++t) grad.embedding.row(tokens[static_cast<std::size_t>(t)]) += dh.row(t);
}

ObjectiveValue objective_impl(const ModelParams& params, std::span<const Token> window, const ObjectiveContext& ctx,
                              ModelParams* grad, double dropout, Rng* rng) {
    if (window.size() < 2) throw ShapeError("training window needs at least 2 tokens");
    const auto input = window.first(window.size() - 1);
    const auto targets = window.subspan(1);
    validate_tokens(params.config, input);
    for (Token t : targets) {
        if (t >= params.config.vocab) throw DomainError("target id " + std::to_string(t) + " outside the vocabulary");
    }
    if (dropout > 0.0 && rng == nullptr) throw ValidationError("dropout needs a random source");

    ForwardCache cache;
    Mat logits = forward_core(params, input, dropout, rng, grad ? &cache : nullptr);
    Mat probs = logits;
    softmax_rows(probs);

    const auto T = static_cast<Eigen::Index>(input.size());
    const std::size_t power_count = ctx.power_values.size();
    auto is_power = [&](Token t) { return t >= ctx.power_offset && t < ctx.power_offset + power_count; };

    ObjectiveValue out;
    std::size_t counted = 0;
    double ce_sum = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
        const Token y = targets[static_cast<std::size_t>(t)];
        if (ctx.ce_power_only && !is_power(y)) continue;
        ce_sum -= std::log(std::max(probs(t, y), kProbFloor));
        ++counted;
    }
    out.targets = counted;
    out.ce = counted ? ce_sum / static_cast<double>(counted) : 0.0;

    Mat dlogits;
    if (grad) {
        dlogits.setZero(T, probs.cols());
        if (counted) {
            const double inv = 1.0 / static_cast<double>(counted);
            for (Eigen::Index t = 0; t < T; ++t) {
                const Token y = targets[static_cast<std::size_t>(t)];
                if (ctx.ce_power_only && !is_power(y)) continue;
                dlogits.row(t) = probs.row(t) * inv;
                dlogits(t, y) -= inv;
            }
        }
    }

    out.total = out.ce;
    if (ctx.physics_enabled()) {
        // Positions whose next token is the power slot of step k = (i + 1) / C.
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < T; ++i) {
            if ((static_cast<std::size_t>(i) + 1) % ctx.channels == 0) rows.push_back(i);
        }
        const std::size_t K = rows.size();
        if (K >= 1) {
            const auto P = static_cast<Eigen::Index>(power_count);
            const auto off = static_cast<Eigen::Index>(ctx.power_offset);
            const Eigen::Map<const Eigen::RowVectorXd> values(ctx.power_values.data(), P);
            std::vector<Eigen::RowVectorXd> pi(K);
            std::vector<double> expected(K), cap(K);
            for (std::size_t k = 0; k < K; ++k) {
                auto z = logits.row(rows[k]).segment(off, P);
                const double mx = z.maxCoeff();
                pi[k] = (z.array() - mx).exp();
                pi[k] /= pi[k].sum();
                expected[k] = pi[k].dot(values);
                const std::size_t step = (static_cast<std::size_t>(rows[k]) + 1) / ctx.channels;
                const Token w = window[step * ctx.channels + ctx.wind_position];
                if (w < ctx.wind_offset || w >= ctx.wind_offset + ctx.wind_cap.size())
                    throw DomainError("expected a wind token at step " + std::to_string(step));
                cap[k] = ctx.wind_cap[w - ctx.wind_offset];
            }
            const auto& wts = ctx.weights;
            std::vector<double> gcap(K, 0.0), gramp(K, 0.0), gtv(K, 0.0);
            out.cap = cap_loss_norm(expected, cap, grad ? std::span<double>(gcap) : std::span<double>{});
            if (K >= 2) {
                out.ramp = ramp_loss_norm(expected, ctx.ramp_up, ctx.ramp_down, grad ? std::span<double>(gramp) : std::span<double>{});
                out.tv = tv_loss(expected, wts.delta, grad ? std::span<double>(gtv) : std::span<double>{});
            }
            out.total = total_loss(out.ce, out.cap, out.ramp, out.tv, wts);
            if (grad) {
                for (std::size_t k = 0; k < K; ++k) {
                    const double gp = wts.lambda_cap * gcap[k] + wts.lambda_ramp * gramp[k] + wts.lambda_tv * gtv[k];
                    if (gp == 0.0) continue;
                    // d E[p] / d z_j = pi_j (value_j - E[p]) for the power-restricted softmax.
                    dlogits.row(rows[k]).segment(off, P) +=
                        gp * (pi[k].array() * (values.array() - expected[k])).matrix();
                }
            }
        }
    }

    if (!std::isfinite(out.total)) throw TrainingError("non-finite objective");
    if (grad) backward_core(params, input, cache, dlogits, *grad);
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (d_model == 0 || heads == 0 || blocks == 0 || d_ff == 0 || vocab == 0 || context == 0)
        throw ValidationError("model dimensions must be positive");
    if (d_model % heads != 0) throw ValidationError("d_model must be divisible by heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
    if (vocab > 65536) throw ValidationError("vocabulary exceeds 16-bit token ids");
}

ModelParams ModelParams::zeros(const ModelConfig& c) {
    c.validate();
    const auto d = static_cast<Eigen::Index>(c.d_model);
    const auto ff = static_cast<Eigen::Index>(c.d_ff);
    const auto V = static_cast<Eigen::Index>(c.vocab);
    ModelParams p;
    p.config = c;
    p.embedding = Mat::Zero(V, d);
    p.blocks.resize(c.blocks);
    for (auto& b : p.blocks) {
        b.ln1_gain = Mat::Zero(1, d);
        b.ln1_bias = Mat::Zero(1, d);
        b.w_query = Mat::Zero(d, d);
        b.w_key = Mat::Zero(d, d);
        b.w_value = Mat::Zero(d, d);
        b.w_attn_out = Mat::Zero(d, d);
        b.ln2_gain = Mat::Zero(1, d);
        b.ln2_bias = Mat::Zero(1, d);
        b.w_ff1 = Mat::Zero(d, ff);
        b.b_ff1 = Mat::Zero(1, ff);
        b.w_ff2 = Mat::Zero(ff, d);
        b.b_ff2 = Mat::Zero(1, d);
    }
    p.final_gain = Mat::Zero(1, d);
    p.final_bias = Mat::Zero(1, d);
    p.w_output = Mat::Zero(V, d);
    return p;
}

ModelParams ModelParams::init(const ModelConfig& c, std::uint64_t seed) {
    ModelParams p = zeros(c);
    Rng rng(seed, "model.init");
    auto fill = [&](Mat& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, 0.02);
    };
    fill(p.embedding);
    for (auto& b : p.blocks) {
        b.ln1_gain.setOnes();
        b.ln2_gain.setOnes();
        fill(b.w_query);
        fill(b.w_key);
        fill(b.w_value);
        fill(b.w_attn_out);
        fill(b.w_ff1);
        fill(b.w_ff2);
    }
    p.final_gain.setOnes();
    fill(p.w_output);
    return p;
}

std::vector<NamedTensor> ModelParams::tensors() {
    std::vector<NamedTensor> out;
    out.push_back({"embedding", &embedding});
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        auto& b = blocks[l];
        const std::string pre = "block" + std::to_string(l) + ".";
        out.push_back({pre + "ln1_gain", &b.ln1_gain});
        out.push_back({pre + "ln1_bias", &b.ln1_bias});
        out.push_back({pre + "w_query", &b.w_query});
        out.push_back({pre + "w_key", &b.w_key});
        out.push_back({pre + "w_value", &b.w_value});
        out.push_back({pre + "w_attn_out", &b.w_attn_out});
        out.push_back({pre + "ln2_gain", &b.ln2_gain});
        out.push_back({pre + "ln2_bias", &b.ln2_bias});
        out.push_back({pre + "w_ff1", &b.w_ff1});
        out.push_back({pre + "b_ff1", &b.b_ff1});
        out.push_back({pre + "w_ff2", &b.w_ff2});
        out.push_back({pre + "b_ff2", &b.b_ff2});
    }
    out.push_back({"final_gain", &final_gain});
    out.push_back({"final_bias", &final_bias});
    out.push_back({"w_output", &w_output});
    return out;
}

std::vector<ConstNamedTensor> ModelParams::tensors() const {
    std::vector<ConstNamedTensor> out;
    for (auto& t : const_cast<ModelParams*>(this)->tensors()) out.push_back({t.name, t.value});
    return out;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += static_cast<std::size_t>(t.value->size());
    return n;
}

bool ModelParams::all_finite() const {
    for (const auto& t : tensors()) {
        if (!t.value->allFinite()) return false;
    }
    return true;
}

Mat positional_encoding(std::size_t positions, std::size_t d_model) {
    Mat pe(static_cast<Eigen::Index>(positions), static_cast<Eigen::Index>(d_model));
    for (std::size_t t = 0; t < positions; ++t) pe.row(static_cast<Eigen::Index>(t)) = positional_row(t, d_model);
    return pe;
}

Mat forward(const ModelParams& params, std::span<const Token> tokens) {
    validate_tokens(params.config, tokens);
    Mat probs = forward_core(params, tokens, 0.0, nullptr, nullptr);
    softmax_rows(probs);
    return probs;
}

double loss_ce(const Mat& probs, std::span<const Token> targets) {
    if (static_cast<std::size_t>(probs.rows()) != targets.size())
        throw ShapeError("cross-entropy: " + std::to_string(probs.rows()) + " distributions vs " +
                         std::to_string(targets.size()) + " targets");
    double loss = 0.0;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        if (targets[t] >= probs.cols()) throw DomainError("target id outside the vocabulary");
        loss -= std::log(std::max(probs(static_cast<Eigen::Index>(t), targets[t]), kProbFloor));
    }
    return loss;
}

ObjectiveContext ObjectiveContext::from(const TokenizerSpec& spec, const PhysicsEnvelope& env, const LossWeights& weights) {
    weights.validate();
    ObjectiveContext ctx;
    ctx.channels = kChannelCount;
    const auto& pc = spec.codec(Channel::Power);
    ctx.power_offset = pc.offset;
    ctx.power_values.resize(pc.bins);
    for (std::size_t k = 0; k < pc.bins; ++k)
        ctx.power_values[k] = mu_law_decode(static_cast<Token>(pc.offset + k), spec) / spec.rated_kw;
    const auto& wc = spec.codec(Channel::WindSpeed);
    ctx.wind_position = index_of(Channel::WindSpeed);
    ctx.wind_offset = wc.offset;
    ctx.wind_cap.resize(wc.bins);
    const std::size_t reachable = wc.effective_bins();
    for (std::size_t k = 0; k < wc.bins; ++k) {
        const std::size_t kk = std::min(k, reachable - 1);
        const double v = quantile_decode(static_cast<Token>(wc.offset + kk), Channel::WindSpeed, spec);
        ctx.wind_cap[k] = cap_kw(env, weights.alpha, v) / env.rated_kw;
    }
    ctx.ramp_up = env.ramp_up_kw / env.rated_kw;
    ctx.ramp_down = env.ramp_down_kw / env.rated_kw;
    ctx.weights = weights;
    return ctx;
}

bool ObjectiveContext::physics_enabled() const {
    const bool any = weights.lambda_cap > 0.0 || weights.lambda_ramp > 0.0 || weights.lambda_tv > 0.0;
    return any && !power_values.empty() && !wind_cap.empty();
}

ObjectiveValue evaluate_objective(const ModelParams& params, std::span<const Token> window, const ObjectiveContext& ctx) {
    return objective_impl(params, window, ctx, nullptr, 0.0, nullptr);
}

ObjectiveValue accumulate_gradients(const ModelParams& params, std::span<const Token> window, const ObjectiveContext& ctx,
                                    ModelParams& grad, double dropout, Rng* dropout_rng) {
    return objective_impl(params, window, ctx, &grad, dropout, dropout_rng);
}

Decoder::Decoder(const ModelParams& params) : params_(&params) {
    const auto ctx = static_cast<Eigen::Index>(params.config.context);
    const auto d = static_cast<Eigen::Index>(params.config.d_model);
    keys_.assign(params.blocks.size(), Mat::Zero(ctx, d));
    values_.assign(params.blocks.size(), Mat::Zero(ctx, d));
}

const Eigen::VectorXd& Decoder::append(std::span<const Token> tokens) {
    const ModelParams& p = *params_;
    const auto& cfg = p.config;
    if (tokens.empty()) throw ShapeError("append needs at least one token");
    if (length_ + tokens.size() > cfg.context)
        throw DecodeError("sequence of " + std::to_string(length_ + tokens.size()) + " exceeds context " +
                          std::to_string(cfg.context));
    for (Token t : tokens) {
        if (t >= cfg.vocab) throw DomainError("token id " + std::to_string(t) + " outside the vocabulary");
    }
    const auto n = static_cast<Eigen::Index>(tokens.size());
    const auto base = static_cast<Eigen::Index>(length_);
    const auto dk = static_cast<Eigen::Index>(cfg.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    Mat h(n, static_cast<Eigen::Index>(cfg.d_model));
    for (Eigen::Index i = 0; i < n; ++i)
        h.row(i) = p.embedding.row(tokens[static_cast<std::size_t>(i)]) + positional_row(length_ + static_cast<std::size_t>(i), cfg.d_model);

    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        const BlockParams& bp = p.blocks[l];
        const Mat x1 = layer_norm(h, bp.ln1_gain, bp.ln1_bias, nullptr);
        const Mat q = x1 * bp.w_query;
        keys_[l].middleRows(base, n) = x1 * bp.w_key;
        values_[l].middleRows(base, n) = x1 * bp.w_value;
        Mat concat(n, static_cast<Eigen::Index>(cfg.d_model));
        for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
            const auto col = static_cast<Eigen::Index>(hd) * dk;
            for (Eigen::Index i = 0; i < n; ++i) {
                const Eigen::Index visible = base + i + 1;
                Eigen::RowVectorXd s = (q.block(i, col, 1, dk) * keys_[l].block(0, col, visible, dk).transpose()) * scale;
                s = (s.array() - s.maxCoeff()).exp();
                s /= s.sum();
                concat.block(i, col, 1, dk) = s * values_[l].block(0, col, visible, dk);
            }
        }
        const Mat u = h + concat * bp.w_attn_out;
        const Mat x2 = layer_norm(u, bp.ln2_gain, bp.ln2_bias, nullptr);
        const Mat g = ((x2 * bp.w_ff1).rowwise() + bp.b_ff1.row(0)).unaryExpr([](double x) { return gelu(x); });
        h = u + ((g * bp.w_ff2).rowwise() + bp.b_ff2.row(0));
    }
    const Mat y = layer_norm(h.bottomRows(1), p.final_gain, p.final_bias, nullptr);
    Eigen::VectorXd logits = p.w_output * y.row(0).transpose();
    if (!logits.allFinite()) throw DecodeError("non-finite model output");
    probs_ = (logits.array() - logits.maxCoeff()).exp();
    probs_ /= probs_.sum();
    length_ += tokens.size();
    return probs_;
}

}  // namespace icegen
