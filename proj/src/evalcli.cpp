// SPDX-License-Identifier: Apache-2.0
#include "editflow/evalcli.hpp"

#include "editflow/errors.hpp"
#include "editflow/flowcore.hpp"
#include "editflow/io.hpp"
#include "editflow/plot.hpp"

#include <json.hpp>

#include <cmath>
#include <iostream>
#include <sstream>
#include <thread>

namespace editflow::eval {

using nlohmann::json;

std::string EvalReport::serialize() const {
    std::ostringstream os;
    json header = {{"report",
                    {{"config_hash", config_hash},
                     {"dataset_seed", dataset_seed},
                     {"n_samples", n_samples},
                     {"overall", overall},
                     {"identity_drift", identity_drift},
                     {"realism_proxy", realism_proxy},
                     {"halted", halted}}}};
    os << header.dump() << "\n";
    for (const auto& [type, rate] : success_by_type)
        os << json{{"edit_type", type}, {"success_rate", rate}}.dump() << "\n";
    return os.str();
}

EvalReport EvalReport::deserialize(const std::string& text) {
    EvalReport r;
    std::istringstream is(text);
    std::string line;
    bool have_header = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (j.contains("report")) {
            const auto& h = j["report"];
            r.config_hash = h.at("config_hash").get<std::string>();
            r.dataset_seed = h.at("dataset_seed").get<uint64_t>();
            r.n_samples = h.at("n_samples").get<int>();
            r.overall = h.at("overall").get<double>();
            r.identity_drift = h.at("identity_drift").get<double>();
            r.realism_proxy = h.at("realism_proxy").get<double>();
            r.halted = h.at("halted").get<bool>();
            have_header = true;
        } else if (j.contains("edit_type")) {
            r.success_by_type[j.at("edit_type").get<std::string>()] =
                j.at("success_rate").get<double>();
        }
    }
    if (!have_header) throw InputError("EvalReport: missing header line");
    return r;
}

namespace {

struct LoadedModel {
    train::TrainConfig cfg;
    std::unique_ptr<nn::VelocityNet> generator;
    std::unique_ptr<nn::VelocityNet> teacher;
};

LoadedModel load_model(const std::string& checkpoint_path) {
    io::Checkpoint ck = io::load_checkpoint(checkpoint_path);
    auto kind = ck.meta.find("kind");
    if (kind == ck.meta.end() || kind->second != "train_state")
        throw VersionError("evaluate: not a trainer checkpoint: " + checkpoint_path);
    LoadedModel m;
    m.cfg = train::TrainConfig::from_kv(io::parse_kv_text(ck.meta.at("config")));
    m.generator = std::make_unique<nn::VelocityNet>(m.cfg.net_config());
    m.generator->load(ck, "generator");
    m.teacher = std::make_unique<nn::VelocityNet>(m.cfg.net_config());
    m.teacher->load(ck, "teacher");
    return m;
}

} // namespace

EvalReport evaluate(const std::string& checkpoint_path, const world::Dataset& dataset, int n,
                    uint64_t seed) {
    LoadedModel model = load_model(checkpoint_path);
    if (n < 1) throw InputError("evaluate: n must be >= 1");
    if (static_cast<int>(dataset.records.size()) < n)
        throw InputError("evaluate: dataset smaller than n");

    ad::NoGradGuard ng;
    Rng rng(seed);
    std::map<std::string, std::pair<int, int>> tally; // type -> (success, count)
    double drift_sum = 0.0;
    double realism_sum = 0.0;
    int realism_batches = 0;
    const int B = model.cfg.batch_size;
    for (int start = 0; start < n; start += B) {
        int bs = std::min(B, n - start);
        std::vector<const world::EditRecord*> batch;
        for (int i = 0; i < bs; ++i)
            batch.push_back(&dataset.records[static_cast<size_t>(start + i)]);
        gen::EditCondition cond = gen::make_condition(batch, true, model.cfg.cond_dim);
        Tensor out = gen::sample_inference(*model.generator, cond, rng, 4);
        for (int i = 0; i < bs; ++i) {
            Tensor img({3, 32, 32});
            std::copy_n(out.data() + static_cast<int64_t>(i) * 3 * 32 * 32, 3 * 32 * 32,
                        img.data());
            world::OracleVerdict v = world::oracle_evaluate(*batch[static_cast<size_t>(i)], img);
            auto& [succ, cnt] = tally[world::edit_type_name(batch[static_cast<size_t>(i)]->edit_type)];
            succ += v.success ? 1 : 0;
            cnt += 1;
            drift_sum += v.drift;
        }
        // Realism proxy: teacher flow loss on the generated batch at random t.
        float t_r = static_cast<float>(rng.uniform(0.02, 0.98));
        Tensor eps = Tensor::randn(out.shape(), rng);
        Tensor x_t(out.shape());
        for (int64_t i = 0; i < x_t.numel(); ++i)
            x_t[i] = (1.0F - t_r) * out[i] + t_r * eps[i];
        std::vector<std::string> captions;
        for (const auto* r : batch) captions.push_back(r->target_caption);
        gen::EditCondition cc = gen::make_caption_condition(captions, bs, model.cfg.cond_dim);
        std::vector<float> tv(static_cast<size_t>(bs), t_r);
        Tensor v_real =
            model.teacher->forward(ad::constant(x_t), tv, cc.reference, cc.embedding).value();
        realism_sum += flow::flow_loss(v_real, out, eps, model.cfg.flow_w_t);
        ++realism_batches;
    }

    EvalReport rep;
    double overall_sum = 0.0;
    for (const auto& [type, sc] : tally) {
        double rate = sc.second > 0 ? static_cast<double>(sc.first) / sc.second : 0.0;
        rep.success_by_type[type] = rate;
        overall_sum += rate;
    }
    rep.overall = tally.empty() ? 0.0 : overall_sum / static_cast<double>(tally.size());
    rep.identity_drift = drift_sum / static_cast<double>(n);
    rep.realism_proxy = realism_batches > 0 ? realism_sum / realism_batches : 0.0;
    rep.n_samples = n;
    rep.config_hash = io::hex64(model.cfg.hash());
    rep.dataset_seed = dataset.manifest.seed;
    return rep;
}

std::string AblationResult::serialize() const {
    std::ostringstream os;
    for (const auto& [mode, rep] : by_mode) {
        json types = json::object();
        for (const auto& [t, r] : rep.success_by_type) types[t] = r;
        os << json{{"mode", mode},
                   {"overall", rep.overall},
                   {"identity_drift", rep.identity_drift},
                   {"realism_proxy", rep.realism_proxy},
                   {"halted", rep.halted},
                   {"config_hash", rep.config_hash},
                   {"success_by_type", types}}
                  .dump()
           << "\n";
    }
    return os.str();
}

void write_sample_grid(const std::string& checkpoint_path, const world::Dataset& dataset,
                       int n_samples, uint64_t seed, const std::string& png_path) {
    LoadedModel model = load_model(checkpoint_path);
    ad::NoGradGuard ng;
    Rng rng(seed);
    int n = std::min<int>(n_samples, static_cast<int>(dataset.records.size()));
    std::vector<const world::EditRecord*> batch;
    for (int i = 0; i < n; ++i) batch.push_back(&dataset.records[static_cast<size_t>(i)]);
    gen::EditCondition cond = gen::make_condition(batch, true, model.cfg.cond_dim);
    Tensor out = gen::sample_inference(*model.generator, cond, rng, 4);
    std::vector<Tensor> cells;
    for (int i = 0; i < n; ++i) cells.push_back(batch[static_cast<size_t>(i)]->image);
    for (int i = 0; i < n; ++i) {
        Tensor img({3, 32, 32});
        std::copy_n(out.data() + static_cast<int64_t>(i) * 3 * 32 * 32, 3 * 32 * 32, img.data());
        cells.push_back(img);
    }
    plot::image_grid(cells, n, png_path);
}

namespace {

std::vector<double> read_metric_series(const std::string& metrics_path, const std::string& field) {
    std::vector<double> out;
    if (!io::file_exists(metrics_path)) return out;
    std::istringstream is(io::read_file(metrics_path));
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains(field)) continue;
        out.push_back(j.at(field).get<double>());
    }
    return out;
}

std::vector<double> downsample(const std::vector<double>& v, size_t max_points) {
    if (v.size() <= max_points) return v;
    std::vector<double> out;
    double step = static_cast<double>(v.size()) / static_cast<double>(max_points);
    for (size_t i = 0; i < max_points; ++i)
        out.push_back(v[static_cast<size_t>(static_cast<double>(i) * step)]);
    return out;
}

} // namespace

AblationResult run_ablation_suite(const train::TrainConfig& base_config,
                                  const world::Dataset& dataset, const AblationOptions& opt) {
    io::make_dirs(opt.out_dir);
    std::string teacher_path = opt.out_dir + "/teacher.ckpt";
    if (!io::file_exists(teacher_path)) train::Trainer::pretrain_teacher(base_config, teacher_path);

    auto run_mode = [&](const std::string& mode) -> EvalReport {
        train::TrainConfig cfg = base_config;
        if (mode == "standard_ce") {
            cfg.loss_variant = train::LossVariant::standard_ce;
            cfg.ablation_mode = train::AblationMode::full;
        } else {
            cfg.ablation_mode = train::ablation_mode_from_name(mode);
        }
        std::string dir = opt.out_dir + "/" + mode;
        io::make_dirs(dir);
        train::Trainer trainer(cfg, dataset, dir);
        trainer.setup_models(teacher_path);
        bool halted = false;
        try {
            trainer.run();
        } catch (const NumericError& e) {
            std::cerr << "[ablate] mode " << mode << " halted: " << e.what() << "\n";
            halted = true;
        }
        std::string ckpt = dir + "/checkpoint.ckpt";
        if (halted && io::file_exists(dir + "/halt_dump.ckpt")) ckpt = dir + "/halt_dump.ckpt";
        EvalReport rep;
        if (io::file_exists(ckpt)) {
            rep = evaluate(ckpt, dataset, opt.eval_n, opt.eval_seed);
            write_sample_grid(ckpt, dataset, 8, opt.eval_seed, dir + "/samples.png");
        }
        rep.halted = halted;
        io::write_file(dir + "/report.jsonl", rep.serialize());
        return rep;
    };

    AblationResult result;
    if (opt.parallel) {
        std::vector<EvalReport> reports(opt.modes.size());
        std::vector<std::thread> threads;
        for (size_t i = 0; i < opt.modes.size(); ++i)
            threads.emplace_back([&, i] { reports[i] = run_mode(opt.modes[i]); });
        for (auto& t : threads) t.join();
        for (size_t i = 0; i < opt.modes.size(); ++i)
            result.by_mode.emplace_back(opt.modes[i], reports[i]);
    } else {
        for (const auto& mode : opt.modes) result.by_mode.emplace_back(mode, run_mode(mode));
    }

    io::write_file(opt.out_dir + "/ablation.jsonl", result.serialize());

    // Plots: realism curves per mode, per-type success bars.
    io::make_dirs(opt.out_dir + "/plots");
    std::vector<plot::Series> realism, vlm_loss;
    for (const auto& [mode, rep] : result.by_mode) {
        plot::Series s;
        s.label = mode;
        s.values = downsample(
            read_metric_series(opt.out_dir + "/" + mode + "/metrics.jsonl", "realism_proxy"),
            1000);
        realism.push_back(s);
        plot::Series l;
        l.label = mode;
        l.values = downsample(
            read_metric_series(opt.out_dir + "/" + mode + "/metrics.jsonl", "loss_vlm"), 1000);
        vlm_loss.push_back(l);
    }
    plot::line_chart(realism, opt.out_dir + "/plots/realism_proxy");
    plot::line_chart(vlm_loss, opt.out_dir + "/plots/loss_vlm");

    std::vector<std::string> categories = {"add", "remove", "color", "background", "replace"};
    std::vector<plot::Series> bars;
    for (const auto& [mode, rep] : result.by_mode) {
        plot::Series s;
        s.label = mode;
        for (const auto& c : categories) {
            auto it = rep.success_by_type.find(c);
            s.values.push_back(it == rep.success_by_type.end() ? 0.0 : it->second);
        }
        bars.push_back(s);
    }
    plot::bar_chart(categories, bars, opt.out_dir + "/plots/success_by_type");

    std::cout << "\nmode            overall  drift    realism  halted\n";
    for (const auto& [mode, rep] : result.by_mode) {
        std::printf("%-15s %.3f    %.4f   %.4f   %s\n", mode.c_str(), rep.overall,
                    rep.identity_drift, rep.realism_proxy, rep.halted ? "yes" : "no");
    }
    return result;
}

} // namespace editflow::eval
