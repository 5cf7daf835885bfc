// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "editflow/autograd.hpp"
#include "editflow/dataworld.hpp"
#include "editflow/tensor.hpp"

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace editflow::judge {

enum class Answer { yes, no };

struct QAPair {
    std::string question;
    Answer expected = Answer::yes;
};

struct JudgeVerdict {
    float logit_yes = 0.0F;
    float logit_no = 0.0F;
    Answer expected = Answer::yes;
    // sigma(l_answer - l_opposite)
    float p_correct = 0.5F;
};

// Builds exactly two questions for a record: edit verification first (for
// removal a presence question with expected No), identity preservation
// second. Question strings are the judge prompt templates with the
// instruction/object slot filled.
std::array<QAPair, 2> build_qa(const world::EditRecord& record);

// Question emitters for the customization task. Not used by the trainer;
// provided for driving an external judge on that task.
std::array<QAPair, 2> customization_qa(const std::string& object_name);

// -sum_j log sigma(l_a - l_abar), summed over the question set.
double vlm_edit_loss(const std::vector<JudgeVerdict>& verdicts);

// Ablation variant: cross-entropy of the correct token against the full
// vocabulary. vocab_logits[i] are the logits for verdict i; yes_idx/no_idx
// locate the answer tokens.
double standard_ce_loss(const std::vector<JudgeVerdict>& verdicts,
                        const std::vector<std::vector<float>>& vocab_logits, int yes_idx,
                        int no_idx);

// Pluggable scoring backend. score() must be deterministic.
class JudgeBackend {
public:
    virtual ~JudgeBackend() = default;
    virtual std::string name() const = 0;
    virtual bool supports_gradients() const = 0;
    // first is the reference image for two-image questions; removal presence
    // questions look only at second.
    virtual JudgeVerdict score(const std::optional<Tensor>& first, const Tensor& second,
                               const QAPair& q) const = 0;
};

// Backend that can be differentiated through, for training.
class DifferentiableJudge : public JudgeBackend {
public:
    // Per-sample (logit_yes - logit_no), differentiable w.r.t. gen.
    // refs is [B,3,H,W]; gen is [B,3,H,W]; qs has one question per sample.
    virtual ad::Var logit_diff_batch(const Tensor& refs, const ad::Var& gen,
                                     const std::vector<QAPair>& qs) const = 0;
};

struct ToyJudgeConfig {
    float kappa = 4.0F;        // logit sharpness
    float color_tau = 0.10F;   // soft color match width
    float pool_sharpness = 12.0F;
    float identity_margin = 0.4F;
    float identity_gain = 12.0F;
    int template_radius = 5;
};

// Analytic, smooth stand-in for a VLM: parses its own question grammar and
// scores presence/identity with differentiable color and shape filters.
class ToySoftJudge final : public DifferentiableJudge {
public:
    explicit ToySoftJudge(ToyJudgeConfig cfg = {});

    std::string name() const override { return "toy"; }
    bool supports_gradients() const override { return true; }
    JudgeVerdict score(const std::optional<Tensor>& first, const Tensor& second,
                       const QAPair& q) const override;
    ad::Var logit_diff_batch(const Tensor& refs, const ad::Var& gen,
                             const std::vector<QAPair>& qs) const override;

    // Toy vocabulary for the standard-CE ablation: Yes, No plus two
    // distractor tokens whose logits are fixed at zero.
    static constexpr int kVocabSize = 4;
    static constexpr int kYesIndex = 0;
    static constexpr int kNoIndex = 1;
    std::vector<float> vocab_logits(const JudgeVerdict& v) const;
    ad::Var standard_ce_batch(const ad::Var& logit_diff, const std::vector<float>& sign) const;

    const ToyJudgeConfig& config() const { return cfg_; }

private:
    ToyJudgeConfig cfg_;
    Tensor kind_kernels_; // [3,1,k,k] signed shape templates
};

// Replays pinned logits recorded for fixed (images, question) inputs.
// No gradient support; used for contract tests and offline evaluation.
class FixtureJudge final : public JudgeBackend {
public:
    explicit FixtureJudge(const std::string& fixture_path);
    std::string name() const override { return "fixture"; }
    bool supports_gradients() const override { return false; }
    JudgeVerdict score(const std::optional<Tensor>& first, const Tensor& second,
                       const QAPair& q) const override;

    static uint64_t request_key(const std::optional<Tensor>& first, const Tensor& second,
                                const std::string& question);

private:
    struct Entry {
        float logit_yes, logit_no;
    };
    std::vector<std::pair<uint64_t, Entry>> entries_;
};

// Adapter for a serving endpoint exposing Yes/No token logits. Wire contract:
// request {"question": str, "images": [base64 png, ...]}, response
// {"logit_yes": float, "logit_no": float}.
class HttpJudgeAdapter final : public JudgeBackend {
public:
    HttpJudgeAdapter(std::string host, int port, std::string path = "/score");
    std::string name() const override { return "http"; }
    bool supports_gradients() const override { return false; }
    JudgeVerdict score(const std::optional<Tensor>& first, const Tensor& second,
                       const QAPair& q) const override;

private:
    std::string host_;
    int port_;
    std::string path_;
};

} // namespace editflow::judge
