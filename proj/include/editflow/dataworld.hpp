// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "editflow/rng.hpp"
#include "editflow/tensor.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace editflow::world {

enum class EditType { add, remove, color, background, replace, do_nothing };

const char* edit_type_name(EditType t);
EditType edit_type_from_name(const std::string& name);

enum class ShapeKind { circle, square, triangle };

struct Rgb {
    float r, g, b;
};

// Shape palette (8 saturated colors) and background palette (4 muted tones)
// are disjoint so color detectors never confuse figure and ground.
struct Palette {
    static const std::vector<std::pair<std::string, Rgb>>& shape_colors();
    static const std::vector<std::pair<std::string, Rgb>>& background_colors();
    static int shape_color_index(const std::string& name);
    static int background_color_index(const std::string& name);
};

// 3x3 grid of named anchor positions shapes snap to.
struct Anchors {
    static constexpr int kCount = 9;
    static const std::array<std::pair<int, int>, kCount>& coords();
    static const std::array<const char*, kCount>& names();
    static int index_of(const std::string& name);
};

struct Shape {
    ShapeKind kind;
    int color;  // index into Palette::shape_colors()
    int cx, cy; // anchor position, pixels
    int radius; // pixels
};

// Symbolic ground truth of one rendered image. Used by the renderer and the
// evaluation oracle; never by any training loss.
struct ToyScene {
    int background = 0; // index into Palette::background_colors()
    std::vector<Shape> shapes;

    static constexpr int kSize = 32;
};

void validate_scene(const ToyScene& scene);

// Deterministic anti-aliased rasterization to [0,1] RGB, [3,32,32].
Tensor render(const ToyScene& scene);

// Round-trips the image through 8-bit quantization to match what training
// reads back from PNG files.
Tensor render_quantized(const ToyScene& scene);

// Parsed form of a toy-grammar instruction.
struct Edit {
    EditType type = EditType::do_nothing;
    int obj_color = -1;
    ShapeKind obj_kind = ShapeKind::circle;
    int new_color = -1;
    ShapeKind new_kind = ShapeKind::circle;
    int anchor = -1;   // add location
    int new_bg = -1;   // background target
};

std::string instruction_text(const Edit& e);
// Throws InputError when the text is not produced by the toy grammar.
Edit parse_instruction(const std::string& text);

std::string caption_of(const ToyScene& scene);

// Applies an edit to the scene graph. Evaluation-only: the result must never
// be rendered into a training input.
ToyScene apply_edit(const ToyScene& scene, const Edit& edit);

// One unpaired training record: reference image, instruction, captions, type,
// object name. There is deliberately no target-image field anywhere in this
// schema. The source scene rides along for the evaluation oracle only.
struct EditRecord {
    Tensor image; // [3,32,32] reference
    std::string instruction;
    std::string source_caption;
    std::string target_caption;
    EditType edit_type = EditType::do_nothing;
    std::string object_name;
    ToyScene scene; // evaluation-only ground truth of the reference image
};

struct DatasetManifest {
    uint64_t seed = 0;
    int n = 0;
    std::string generator_version = "dataworld-v1";
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<EditRecord> records;

    std::vector<size_t> indices_of(EditType t) const;
};

// Draws a random valid scene. Also used by the teacher pretraining recipe.
ToyScene sample_scene(Rng& rng);

// Samples scenes and one valid instruction each over the five edit types.
// Deterministic given seed; type mix is roughly uniform before the trainer's
// resampling.
Dataset generate_dataset(int n, uint64_t seed);

bool record_is_valid(const EditRecord& rec);

struct OracleVerdict {
    bool success = false;
    Tensor preservation_mask; // [1,32,32] binary; pixels that must not change
    float drift = 0.0F;       // MSE vs reference outside the edit region
};

// Hard, non-differentiable detectors over the scene graph. Evaluation only.
OracleVerdict oracle_evaluate(const EditRecord& rec, const Tensor& output);

enum class PromptKind { instruction_gen, validity_filter, customization_filter, customization_bg };

// Emits the corpus-ingestion prompt of the given kind with slots filled.
// Pure string emission; no model is queried here.
std::string emit_ingestion_prompts(PromptKind kind, const std::map<std::string, std::string>& slots);

} // namespace editflow::world
