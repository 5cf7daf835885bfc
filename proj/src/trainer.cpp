// SPDX-License-Identifier: Apache-2.0
#include "editflow/trainer.hpp"

#include "editflow/errors.hpp"
#include "editflow/flowcore.hpp"
#include "editflow/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace editflow::train {

const char* ablation_mode_name(AblationMode m) {
    switch (m) {
    case AblationMode::full: return "full";
    case AblationMode::only_dmd: return "only_dmd";
    case AblationMode::only_vlm: return "only_vlm";
    case AblationMode::no_identity_q: return "no_identity_q";
    }
    return "?";
}

AblationMode ablation_mode_from_name(const std::string& s) {
    for (AblationMode m : {AblationMode::full, AblationMode::only_dmd, AblationMode::only_vlm,
                           AblationMode::no_identity_q})
        if (s == ablation_mode_name(m)) return m;
    throw ConfigError("unknown ablation_mode: " + s);
}

void TrainConfig::validate() const {
    if (lambda_vlm < 0 || lambda_dmd < 0) throw ConfigError("lambdas must be >= 0");
    if (do_nothing_prob < 0 || do_nothing_prob > 1 || removal_prob < 0 || removal_prob > 1)
        throw ConfigError("probabilities must be in [0,1]");
    if (warmup_iters < 0 || total_iters <= 0 || warmup_iters >= total_iters)
        throw ConfigError("need 0 <= warmup_iters < total_iters");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (n_aux < 0) throw ConfigError("n_aux must be >= 0");
    if (perceptual_lambda < 0) throw ConfigError("perceptual_lambda must be >= 0");
    if (flow_w_t <= 0) throw ConfigError("flow_w_t must be positive");
    gen::TimeGrid g;
    g.grid = t_grid;
    g.validate();
}

namespace {

std::string float_str(float v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

std::string grid_str(const std::vector<float>& g) {
    std::string s;
    for (size_t i = 0; i < g.size(); ++i) {
        if (i) s += ",";
        s += float_str(g[i]);
    }
    return s;
}

std::vector<float> grid_parse(const std::string& s) {
    std::vector<float> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(std::stof(item));
    return out;
}

} // namespace

std::map<std::string, std::string> TrainConfig::to_kv() const {
    std::map<std::string, std::string> kv;
    kv["lambda_vlm"] = float_str(lambda_vlm);
    kv["lambda_dmd"] = float_str(lambda_dmd);
    kv["n_aux"] = std::to_string(n_aux);
    kv["warmup_iters"] = std::to_string(warmup_iters);
    kv["total_iters"] = std::to_string(total_iters);
    kv["single_step_phase_iters"] = std::to_string(single_step_phase_iters);
    kv["batch_size"] = std::to_string(batch_size);
    kv["lr"] = float_str(lr);
    kv["beta1"] = float_str(beta1);
    kv["beta2"] = float_str(beta2);
    kv["t_grid"] = grid_str(t_grid);
    kv["do_nothing_prob"] = float_str(do_nothing_prob);
    kv["removal_prob"] = float_str(removal_prob);
    kv["loss_variant"] = loss_variant == LossVariant::bce ? "bce" : "standard_ce";
    kv["ablation_mode"] = ablation_mode_name(ablation_mode);
    kv["detach_first_step"] = detach_first_step ? "true" : "false";
    kv["perceptual_lambda"] = float_str(perceptual_lambda);
    kv["seed"] = std::to_string(seed);
    kv["grad_clip"] = float_str(grad_clip);
    kv["ema_decay"] = float_str(ema_decay);
    kv["dmd_normalize"] = dmd_normalize ? "true" : "false";
    kv["flow_w_t"] = float_str(flow_w_t);
    kv["cond_dim"] = std::to_string(cond_dim);
    kv["stem_channels"] = std::to_string(stem_channels);
    kv["mid_channels"] = std::to_string(mid_channels);
    kv["film_hidden"] = std::to_string(film_hidden);
    kv["judge_kappa"] = float_str(judge_kappa);
    kv["teacher_iters"] = std::to_string(teacher_iters);
    kv["teacher_lr"] = float_str(teacher_lr);
    kv["checkpoint_every"] = std::to_string(checkpoint_every);
    return kv;
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    for (const auto& [key, value] : kv) {
        if (key == "lambda_vlm") c.lambda_vlm = std::stof(value);
        else if (key == "lambda_dmd") c.lambda_dmd = std::stof(value);
        else if (key == "n_aux") c.n_aux = std::stoi(value);
        else if (key == "warmup_iters") c.warmup_iters = std::stoi(value);
        else if (key == "total_iters") c.total_iters = std::stoi(value);
        else if (key == "single_step_phase_iters") c.single_step_phase_iters = std::stoi(value);
        else if (key == "batch_size") c.batch_size = std::stoi(value);
        else if (key == "lr") c.lr = std::stof(value);
        else if (key == "beta1") c.beta1 = std::stof(value);
        else if (key == "beta2") c.beta2 = std::stof(value);
        else if (key == "t_grid") c.t_grid = grid_parse(value);
        else if (key == "do_nothing_prob") c.do_nothing_prob = std::stof(value);
        else if (key == "removal_prob") c.removal_prob = std::stof(value);
        else if (key == "loss_variant") {
            if (value == "bce") c.loss_variant = LossVariant::bce;
            else if (value == "standard_ce") c.loss_variant = LossVariant::standard_ce;
            else throw ConfigError("unknown loss_variant: " + value);
        } else if (key == "ablation_mode") c.ablation_mode = ablation_mode_from_name(value);
        else if (key == "detach_first_step") c.detach_first_step = (value == "true");
        else if (key == "perceptual_lambda") c.perceptual_lambda = std::stof(value);
        else if (key == "seed") c.seed = std::stoull(value);
        else if (key == "grad_clip") c.grad_clip = std::stof(value);
        else if (key == "ema_decay") c.ema_decay = std::stof(value);
        else if (key == "dmd_normalize") c.dmd_normalize = (value == "true");
        else if (key == "flow_w_t") c.flow_w_t = std::stof(value);
        else if (key == "cond_dim") c.cond_dim = std::stoi(value);
        else if (key == "stem_channels") c.stem_channels = std::stoi(value);
        else if (key == "mid_channels") c.mid_channels = std::stoi(value);
        else if (key == "film_hidden") c.film_hidden = std::stoi(value);
        else if (key == "judge_kappa") c.judge_kappa = std::stof(value);
        else if (key == "teacher_iters") c.teacher_iters = std::stoi(value);
        else if (key == "teacher_lr") c.teacher_lr = std::stof(value);
        else if (key == "checkpoint_every") c.checkpoint_every = std::stoi(value);
        else throw ConfigError("unknown config key: " + key);
    }
    c.validate();
    return c;
}

uint64_t TrainConfig::hash() const { return io::fnv1a(io::render_kv_text(to_kv())); }

nn::NetConfig TrainConfig::net_config() const {
    nn::NetConfig nc;
    nc.stem_channels = stem_channels;
    nc.mid_channels = mid_channels;
    nc.cond_dim = cond_dim;
    nc.film_hidden = film_hidden;
    nc.init_seed = seed ^ 0x9e3779b97f4a7c15ULL;
    return nc;
}

std::string metrics_line(const IterationMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"iter\": %lld, \"loss_vlm\": %.9g, \"loss_dmd\": %.9g, \"v_gap\": %.9g, "
                  "\"judge_acc\": %.9g, \"realism_proxy\": %.9g}",
                  static_cast<long long>(m.iter), m.loss_vlm, m.loss_dmd, m.v_gap, m.judge_acc,
                  m.realism_proxy);
    return buf;
}

Trainer::Trainer(TrainConfig cfg, const world::Dataset& dataset, std::string out_dir)
    : cfg_(std::move(cfg)), dataset_(dataset), out_dir_(std::move(out_dir)), rng_(cfg_.seed) {
    cfg_.validate();
    if (dataset_.records.empty()) throw ConfigError("trainer: empty dataset");
    judge::ToyJudgeConfig jc;
    jc.kappa = cfg_.judge_kappa;
    judge_ = std::make_unique<judge::ToySoftJudge>(jc);
    time_grid_.grid = cfg_.t_grid;
    const world::EditType types[5] = {world::EditType::add, world::EditType::remove,
                                      world::EditType::color, world::EditType::background,
                                      world::EditType::replace};
    for (int i = 0; i < 5; ++i) {
        type_buckets_[i] = dataset_.indices_of(types[i]);
        if (type_buckets_[i].empty())
            throw ConfigError(std::string("trainer: dataset has no records of type ") +
                              world::edit_type_name(types[i]));
    }
    if (!out_dir_.empty()) io::make_dirs(out_dir_);
}

void Trainer::pretrain_teacher(const TrainConfig& cfg, const std::string& out_path) {
    nn::VelocityNet teacher(cfg.net_config());
    nn::AdamConfig oc;
    oc.lr = cfg.teacher_lr;
    oc.beta1 = 0.9F;
    oc.beta2 = 0.99F;
    nn::Adam opt(teacher.params(), oc);
    Rng rng(cfg.seed ^ 0x7eac4e20badc0deULL);
    const int B = cfg.batch_size;
    Tensor zero_ref({B, 3, 32, 32});
    for (int it = 0; it < cfg.teacher_iters; ++it) {
        Tensor x({B, 3, 32, 32});
        std::vector<std::string> captions;
        for (int b = 0; b < B; ++b) {
            world::ToyScene scene = world::sample_scene(rng);
            Tensor img = world::render_quantized(scene);
            std::copy_n(img.data(), img.numel(), x.data() + static_cast<int64_t>(b) * img.numel());
            captions.push_back(world::caption_of(scene));
        }
        Tensor eps = Tensor::randn(x.shape(), rng);
        std::vector<float> tv(static_cast<size_t>(B));
        Tensor x_t(x.shape());
        int64_t per = x.numel() / B;
        for (int b = 0; b < B; ++b) {
            tv[static_cast<size_t>(b)] = static_cast<float>(1.0 - rng.uniform());
            float t = tv[static_cast<size_t>(b)];
            for (int64_t i = 0; i < per; ++i) {
                int64_t k = b * per + i;
                x_t[k] = (1.0F - t) * x[k] + t * eps[k];
            }
        }
        Tensor cond = nn::embed_batch(captions, cfg.cond_dim);
        ad::Var v = teacher.forward(ad::constant(x_t), tv, zero_ref, cond);
        ad::Var loss = flow::flow_loss(v, x, eps, cfg.flow_w_t);
        if (!std::isfinite(loss.value()[0]))
            throw NumericError("teacher pretraining: non-finite loss at iteration " +
                               std::to_string(it));
        ad::backward(loss);
        opt.step();
        if (it % 500 == 0)
            std::cout << "[teacher] iter " << it << " flow_loss " << loss.value()[0] << "\n";
    }
    io::Checkpoint ck;
    ck.meta["kind"] = "teacher";
    ck.meta["recipe"] = "caption-conditioned flow matching on random scene renders";
    ck.meta["seed"] = std::to_string(cfg.seed);
    ck.meta["iters"] = std::to_string(cfg.teacher_iters);
    teacher.save(ck, "teacher");
    io::save_checkpoint(ck, out_path);
}

void Trainer::setup_models(const std::string& teacher_ckpt_path) {
    if (!io::file_exists(teacher_ckpt_path)) {
        std::cout << "[trainer] teacher checkpoint missing; running the bundled pretraining "
                     "recipe -> "
                  << teacher_ckpt_path << "\n";
        pretrain_teacher(cfg_, teacher_ckpt_path);
    }
    io::Checkpoint ck = io::load_checkpoint(teacher_ckpt_path);
    teacher_ = std::make_unique<nn::VelocityNet>(cfg_.net_config());
    teacher_->load(ck, "teacher");
    monitor_teacher_ = std::make_unique<nn::VelocityNet>(cfg_.net_config());
    monitor_teacher_->load(ck, "teacher");
    generator_ = std::make_unique<nn::VelocityNet>(cfg_.net_config());
    nn::copy_params(teacher_->params(), generator_->params());
    aux_ = std::make_unique<nn::VelocityNet>(cfg_.net_config());
    nn::copy_params(teacher_->params(), aux_->params());

    nn::AdamConfig oc;
    oc.lr = cfg_.lr;
    oc.beta1 = cfg_.beta1;
    oc.beta2 = cfg_.beta2;
    gen_opt_ = std::make_unique<nn::Adam>(generator_->params(), oc);
    aux_opt_ = std::make_unique<nn::Adam>(aux_->params(), oc);

    dmd_ctx_.teacher = teacher_.get();
    dmd_ctx_.aux = aux_.get();
    dmd_ctx_.aux_opt = aux_opt_.get();
    dmd_ctx_.normalize = cfg_.dmd_normalize;
    dmd_ctx_.freeze_teacher();
}

world::EditRecord Trainer::sample_task() {
    double u = rng_.uniform();
    if (u < cfg_.do_nothing_prob) {
        const auto& base = dataset_.records[rng_.uniform_index(dataset_.records.size())];
        world::EditRecord rec;
        rec.image = base.image;
        rec.instruction = "do nothing";
        rec.source_caption = base.source_caption;
        rec.target_caption = base.source_caption;
        rec.edit_type = world::EditType::do_nothing;
        rec.object_name = "";
        rec.scene = base.scene;
        return rec;
    }
    int bucket;
    double v = rng_.uniform();
    if (v < cfg_.removal_prob) {
        bucket = 1; // remove
    } else {
        // Uniform over {add, color, background, replace}.
        static const int others[4] = {0, 2, 3, 4};
        bucket = others[rng_.uniform_index(4)];
    }
    const auto& idx = type_buckets_[bucket];
    return dataset_.records[idx[rng_.uniform_index(idx.size())]];
}

float Trainer::warmup_step(const std::vector<const world::EditRecord*>& batch) {
    int B = static_cast<int>(batch.size());
    gen::EditCondition cond = gen::make_condition(batch, /*use_instruction=*/false, cfg_.cond_dim);
    // x <- y: the reconstruction target is the reference itself.
    Tensor x = cond.reference;
    float t = static_cast<float>(1.0 - rng_.uniform()); // (0, 1]
    Tensor eps = Tensor::randn(x.shape(), rng_);
    Tensor x_t = flow::interpolate(x, eps, t).x_t;
    std::vector<float> tv(static_cast<size_t>(B), t);
    ad::Var v = generator_->forward(ad::constant(x_t), tv, cond.reference, cond.embedding);
    ad::Var loss = flow::flow_loss(v, x, eps, cfg_.flow_w_t);
    float value = loss.value()[0];
    if (!std::isfinite(value)) throw NumericError("warmup: non-finite loss");
    ad::backward(loss);
    gen_opt_->step();
    return value;
}

float Trainer::draw_main_t() {
    if (iteration_ < cfg_.single_step_phase_iters) return 1.0F;
    return cfg_.t_grid[rng_.uniform_index(cfg_.t_grid.size())];
}

Tensor Trainer::generate_detached_batch(const std::vector<const world::EditRecord*>& batch) {
    ad::NoGradGuard ng;
    gen::EditCondition cond = gen::make_condition(batch, true, cfg_.cond_dim);
    int B = static_cast<int>(batch.size());
    Tensor eps = Tensor::randn({B, 3, 32, 32}, rng_);
    float t = draw_main_t();
    if (t >= 1.0F) {
        return gen::one_step_from_noise(*generator_, eps, cond, "aux data generation").value();
    }
    Tensor fresh = Tensor::randn({B, 3, 32, 32}, rng_);
    return gen::two_step_unroll(*generator_, eps, cond, t, fresh, "aux data generation",
                                cfg_.detach_first_step)
        .value();
}

ad::Var Trainer::optional_perceptual_loss(const Tensor& y, const ad::Var& x0) {
    // Mean over three scales of the per-scale MSE.
    ad::Var d0 = ad::mean_all(ad::square(ad::sub_const(x0, y)));
    ad::Var x1 = ad::avgpool2x(x0);
    Tensor y1v(x1.shape());
    {
        ad::NoGradGuard ng;
        y1v = ad::avgpool2x(ad::constant(y)).value();
    }
    ad::Var d1 = ad::mean_all(ad::square(ad::sub_const(x1, y1v)));
    ad::Var x2 = ad::avgpool2x(x1);
    Tensor y2v(x2.shape());
    {
        ad::NoGradGuard ng;
        y2v = ad::avgpool2x(ad::constant(y1v)).value();
    }
    ad::Var d2 = ad::mean_all(ad::square(ad::sub_const(x2, y2v)));
    return ad::affine(ad::add(ad::add(d0, d1), d2), 1.0F / 3.0F);
}

IterationMetrics Trainer::train_iteration(const std::vector<const world::EditRecord*>& batch) {
    if (iteration_ < cfg_.warmup_iters)
        throw ContractError("train_iteration: warmup phase not complete");
    return main_iteration_impl(batch);
}

IterationMetrics Trainer::main_iteration_impl(const std::vector<const world::EditRecord*>& batch) {
    const int B = static_cast<int>(batch.size());
    IterationMetrics m;
    m.iter = iteration_;

    gen::EditCondition cond = gen::make_condition(batch, true, cfg_.cond_dim);
    Tensor eps = Tensor::randn({B, 3, 32, 32}, rng_);
    float t = draw_main_t();
    m.t_drawn = t;
    std::string ctx = "iteration " + std::to_string(iteration_);
    ad::Var x0;
    if (t >= 1.0F) {
        x0 = gen::one_step_from_noise(*generator_, eps, cond, ctx);
    } else {
        Tensor fresh = Tensor::randn({B, 3, 32, 32}, rng_);
        x0 = gen::two_step_unroll(*generator_, eps, cond, t, fresh, ctx, cfg_.detach_first_step);
    }

    ad::Var total;
    bool have_total = false;
    auto add_term = [&](const ad::Var& term) {
        total = have_total ? ad::add(total, term) : term;
        have_total = true;
    };

    // --- VLM editing loss / do-nothing L2 ------------------------------------
    if (cfg_.ablation_mode != AblationMode::only_dmd) {
        std::vector<int> judged_idx, dn_idx;
        for (int b = 0; b < B; ++b) {
            if (batch[static_cast<size_t>(b)]->edit_type == world::EditType::do_nothing)
                dn_idx.push_back(b);
            else
                judged_idx.push_back(b);
        }
        ad::Var loss_sum;
        bool have_sum = false;
        auto accumulate = [&](const ad::Var& v) {
            loss_sum = have_sum ? ad::add(loss_sum, v) : v;
            have_sum = true;
        };
        int n_questions = 0, n_correct = 0;
        if (!judged_idx.empty()) {
            int Bj = static_cast<int>(judged_idx.size());
            ad::Var gen_sel = ad::select_samples(x0, judged_idx);
            Tensor refs_sel({Bj, 3, 32, 32});
            for (int k = 0; k < Bj; ++k)
                std::copy_n(cond.reference.data() +
                                static_cast<int64_t>(judged_idx[static_cast<size_t>(k)]) * 3 * 32 * 32,
                            3 * 32 * 32, refs_sel.data() + static_cast<int64_t>(k) * 3 * 32 * 32);
            std::vector<judge::QAPair> q_verify, q_identity;
            std::vector<float> sign_verify, sign_identity;
            for (int idx : judged_idx) {
                auto qa = judge::build_qa(*batch[static_cast<size_t>(idx)]);
                q_verify.push_back(qa[0]);
                sign_verify.push_back(qa[0].expected == judge::Answer::yes ? 1.0F : -1.0F);
                q_identity.push_back(qa[1]);
                sign_identity.push_back(qa[1].expected == judge::Answer::yes ? 1.0F : -1.0F);
            }
            auto question_loss = [&](const std::vector<judge::QAPair>& qs,
                                     const std::vector<float>& signs) {
                ad::Var diff = judge_->logit_diff_batch(refs_sel, gen_sel, qs);
                for (int k = 0; k < Bj; ++k) {
                    ++n_questions;
                    if ((diff.value()[k] > 0) == (signs[static_cast<size_t>(k)] > 0)) ++n_correct;
                }
                if (cfg_.loss_variant == LossVariant::standard_ce)
                    return ad::sum_all(judge_->standard_ce_batch(diff, signs));
                Tensor neg_sign({Bj});
                for (int k = 0; k < Bj; ++k) neg_sign[k] = -signs[static_cast<size_t>(k)];
                return ad::sum_all(ad::softplus(ad::mul_const(diff, neg_sign)));
            };
            accumulate(question_loss(q_verify, sign_verify));
            if (cfg_.ablation_mode != AblationMode::no_identity_q)
                accumulate(question_loss(q_identity, sign_identity));
        }
        if (!dn_idx.empty()) {
            // Plain L2 to the reference; the judge is not consulted.
            int Bd = static_cast<int>(dn_idx.size());
            ad::Var gen_dn = ad::select_samples(x0, dn_idx);
            Tensor y_dn({Bd, 3, 32, 32});
            for (int k = 0; k < Bd; ++k)
                std::copy_n(cond.reference.data() +
                                static_cast<int64_t>(dn_idx[static_cast<size_t>(k)]) * 3 * 32 * 32,
                            3 * 32 * 32, y_dn.data() + static_cast<int64_t>(k) * 3 * 32 * 32);
            ad::Var l2 = ad::affine(ad::sum_all(ad::square(ad::sub_const(gen_dn, y_dn))),
                                    1.0F / (3.0F * 32.0F * 32.0F));
            accumulate(l2);
        }
        if (have_sum) {
            ad::Var l_vlm = ad::affine(loss_sum, 1.0F / static_cast<float>(B));
            m.loss_vlm = l_vlm.value()[0];
            m.judge_acc = n_questions > 0
                              ? static_cast<double>(n_correct) / static_cast<double>(n_questions)
                              : 0.0;
            add_term(ad::affine(l_vlm, cfg_.lambda_vlm));
        }
    }

    // --- DMD loss -------------------------------------------------------------
    if (cfg_.ablation_mode != AblationMode::only_vlm) {
        std::vector<std::string> captions;
        for (const auto* r : batch) captions.push_back(r->target_caption);
        gen::EditCondition caption_cond = gen::make_caption_condition(captions, B, cfg_.cond_dim);
        float t_dmd = dmd::sample_dmd_timestep(rng_);
        Tensor eps_dmd = Tensor::randn({B, 3, 32, 32}, rng_);
        dmd::DMDGradientReport report;
        ad::Var surrogate =
            dmd::dmd_surrogate_loss(dmd_ctx_, x0, caption_cond, t_dmd, eps_dmd, &report);
        m.loss_dmd = surrogate.value()[0];
        m.v_gap = report.v_gap_norm;
        add_term(ad::affine(surrogate, cfg_.lambda_dmd));
    }

    if (cfg_.perceptual_lambda > 0.0F)
        add_term(ad::affine(optional_perceptual_loss(cond.reference, x0), cfg_.perceptual_lambda));

    if (have_total) {
        float loss_value = total.value()[0];
        if (!std::isfinite(loss_value))
            throw NumericError("train_iteration " + std::to_string(iteration_) +
                               ": non-finite total loss");
        ad::backward(total);
        if (cfg_.grad_clip > 0.0F) {
            double sq = 0.0;
            for (const auto& [name, p] : generator_->params().all())
                if (p.has_grad()) sq += p.grad().sq_norm_double();
            float norm = static_cast<float>(std::sqrt(sq));
            if (norm > cfg_.grad_clip) {
                float scale = cfg_.grad_clip / norm;
                for (auto& [name, p] : const_cast<std::vector<std::pair<std::string, ad::Var>>&>(
                         generator_->params().all()))
                    if (p.has_grad())
                        for (auto& g : const_cast<Tensor&>(p.grad()).vec()) g *= scale;
            }
        }
        gen_opt_->step();
    }

    // --- auxiliary model updates ----------------------------------------------
    if (cfg_.ablation_mode != AblationMode::only_vlm) {
        for (int k = 0; k < cfg_.n_aux; ++k) {
            std::vector<world::EditRecord> fresh_records;
            fresh_records.reserve(static_cast<size_t>(B));
            for (int b = 0; b < B; ++b) fresh_records.push_back(sample_task());
            std::vector<const world::EditRecord*> fresh_ptrs;
            for (const auto& r : fresh_records) fresh_ptrs.push_back(&r);
            Tensor x0_detached = generate_detached_batch(fresh_ptrs);
            std::vector<std::string> captions;
            for (const auto& r : fresh_records) captions.push_back(r.target_caption);
            gen::EditCondition caption_cond =
                gen::make_caption_condition(captions, B, cfg_.cond_dim);
            dmd::aux_train_step(dmd_ctx_, x0_detached, caption_cond, rng_);
        }
    }

    // --- realism proxy (monitor teacher, separate from the DMD teacher) -------
    {
        ad::NoGradGuard ng;
        Tensor x0_val = x0.value();
        float t_r = dmd::sample_dmd_timestep(rng_);
        Tensor eps_r = Tensor::randn({B, 3, 32, 32}, rng_);
        Tensor x_t(x0_val.shape());
        for (int64_t i = 0; i < x_t.numel(); ++i)
            x_t[i] = (1.0F - t_r) * x0_val[i] + t_r * eps_r[i];
        std::vector<std::string> captions;
        for (const auto* r : batch) captions.push_back(r->target_caption);
        gen::EditCondition cc = gen::make_caption_condition(captions, B, cfg_.cond_dim);
        std::vector<float> tv(static_cast<size_t>(B), t_r);
        ad::Var v = monitor_teacher_->forward(ad::constant(x_t), tv, cc.reference, cc.embedding);
        m.realism_proxy = flow::flow_loss(v.value(), x0_val, eps_r, cfg_.flow_w_t);
    }

    ++iteration_;
    return m;
}

float Trainer::reconstruction_error_probe(int n_samples) {
    ad::NoGradGuard ng;
    int n = std::min<int>(n_samples, static_cast<int>(dataset_.records.size()));
    Rng probe_rng(0xfeedfaceULL); // fixed: the probe must not disturb training rng
    double total = 0.0;
    int64_t count = 0;
    for (int start = 0; start < n; start += cfg_.batch_size) {
        int B = std::min(cfg_.batch_size, n - start);
        std::vector<const world::EditRecord*> batch;
        for (int i = 0; i < B; ++i)
            batch.push_back(&dataset_.records[static_cast<size_t>(start + i)]);
        gen::EditCondition cond = gen::make_condition(batch, false, cfg_.cond_dim);
        Tensor eps = Tensor::randn({B, 3, 32, 32}, probe_rng);
        Tensor x_t = flow::interpolate(cond.reference, eps, 0.5F).x_t;
        std::vector<float> tv(static_cast<size_t>(B), 0.5F);
        ad::Var v = generator_->forward(ad::constant(x_t), tv, cond.reference, cond.embedding);
        Tensor x0 = flow::clean_from_velocity(x_t, v.value(), 0.5F);
        for (int64_t i = 0; i < x0.numel(); ++i) {
            double d = static_cast<double>(x0[i]) - cond.reference[i];
            total += d * d;
            ++count;
        }
    }
    return static_cast<float>(total / static_cast<double>(count));
}

void Trainer::run() {
    if (!generator_) throw ConfigError("trainer: setup_models must run first");
    std::ofstream metrics(out_dir_ + "/metrics.jsonl",
                          iteration_ > 0 ? std::ios::app : std::ios::trunc);
    if (iteration_ == 0)
        metrics << "{\"config_hash\": \"" << io::hex64(cfg_.hash()) << "\", \"dataset_seed\": "
                << dataset_.manifest.seed << ", \"mode\": \""
                << ablation_mode_name(cfg_.ablation_mode) << "\"}\n";
    while (iteration_ < cfg_.total_iters) {
        std::vector<world::EditRecord> records;
        records.reserve(static_cast<size_t>(cfg_.batch_size));
        for (int b = 0; b < cfg_.batch_size; ++b) records.push_back(sample_task());
        std::vector<const world::EditRecord*> batch;
        for (const auto& r : records) batch.push_back(&r);

        IterationMetrics m;
        if (iteration_ < cfg_.warmup_iters) {
            m.iter = iteration_;
            m.warmup = true;
            m.warmup_loss = warmup_step(batch);
            ++iteration_;
        } else {
            try {
                m = main_iteration_impl(batch);
            } catch (const NumericError&) {
                // Halt-and-dump policy: preserve state for inspection, then
                // surface the failure to the caller.
                save_checkpoint(out_dir_ + "/halt_dump.ckpt");
                metrics.flush();
                throw;
            }
        }
        history_.push_back(m);
        metrics << metrics_line(m) << "\n";
        if (cfg_.checkpoint_every > 0 && iteration_ % cfg_.checkpoint_every == 0)
            save_checkpoint(out_dir_ + "/checkpoint.ckpt");
        if (iteration_ % 250 == 0) {
            std::cout << "[train " << ablation_mode_name(cfg_.ablation_mode) << "] iter "
                      << iteration_ << "/" << cfg_.total_iters
                      << (m.warmup ? " warmup_loss " + std::to_string(m.warmup_loss)
                                   : " loss_vlm " + std::to_string(m.loss_vlm) + " v_gap " +
                                         std::to_string(m.v_gap))
                      << std::endl;
        }
    }
    save_checkpoint(out_dir_ + "/checkpoint.ckpt");
}

void Trainer::save_checkpoint(const std::string& path) const {
    io::Checkpoint ck;
    ck.meta["kind"] = "train_state";
    ck.meta["config"] = io::render_kv_text(cfg_.to_kv());
    ck.meta["iteration"] = std::to_string(iteration_);
    ck.meta["rng"] = rng_.serialize();
    ck.meta["dataset_seed"] = std::to_string(dataset_.manifest.seed);
    generator_->save(ck, "generator");
    aux_->save(ck, "aux");
    teacher_->save(ck, "teacher");
    gen_opt_->save(ck, "gen_opt");
    aux_opt_->save(ck, "aux_opt");
    io::save_checkpoint(ck, path);
}

void Trainer::load_checkpoint(const std::string& path) {
    io::Checkpoint ck = io::load_checkpoint(path);
    if (ck.meta.at("kind") != "train_state") throw VersionError("not a trainer checkpoint");
    TrainConfig stored = TrainConfig::from_kv(io::parse_kv_text(ck.meta.at("config")));
    if (stored.hash() != cfg_.hash())
        throw VersionError("checkpoint config hash does not match trainer config");
    if (!generator_) {
        teacher_ = std::make_unique<nn::VelocityNet>(cfg_.net_config());
        monitor_teacher_ = std::make_unique<nn::VelocityNet>(cfg_.net_config());
        generator_ = std::make_unique<nn::VelocityNet>(cfg_.net_config());
        aux_ = std::make_unique<nn::VelocityNet>(cfg_.net_config());
        nn::AdamConfig oc;
        oc.lr = cfg_.lr;
        oc.beta1 = cfg_.beta1;
        oc.beta2 = cfg_.beta2;
        gen_opt_ = std::make_unique<nn::Adam>(generator_->params(), oc);
        aux_opt_ = std::make_unique<nn::Adam>(aux_->params(), oc);
        dmd_ctx_.teacher = teacher_.get();
        dmd_ctx_.aux = aux_.get();
        dmd_ctx_.aux_opt = aux_opt_.get();
        dmd_ctx_.normalize = cfg_.dmd_normalize;
    }
    generator_->load(ck, "generator");
    aux_->load(ck, "aux");
    teacher_->load(ck, "teacher");
    monitor_teacher_->load(ck, "teacher");
    gen_opt_->load(ck, "gen_opt");
    aux_opt_->load(ck, "aux_opt");
    iteration_ = std::stoll(ck.meta.at("iteration"));
    rng_.deserialize(ck.meta.at("rng"));
    dmd_ctx_.freeze_teacher();
}

} // namespace editflow::train
