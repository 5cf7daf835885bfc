// SPDX-License-Identifier: Apache-2.0
#include "editflow/dataworld.hpp"

#include "editflow/errors.hpp"

namespace editflow::world {

namespace {

// Replaces every "{slot}" with its value; any placeholder left unfilled is an
// input error so callers cannot silently emit partial prompts.
std::string fill_slots(std::string text, const std::map<std::string, std::string>& slots) {
    for (const auto& [key, value] : slots) {
        std::string needle = "{" + key + "}";
        size_t pos = 0;
        while ((pos = text.find(needle, pos)) != std::string::npos) {
            text.replace(pos, needle.size(), value);
            pos += value.size();
        }
    }
    size_t open = text.find('{');
    while (open != std::string::npos) {
        size_t close = text.find('}', open);
        if (close == std::string::npos) break;
        throw InputError("emit_ingestion_prompts: missing slot '" +
                         text.substr(open + 1, close - open - 1) + "'");
    }
    return text;
}

const char* kInstructionGen = R"(Role: system, Content: You are a helpful assistant and an expert in image editing.
Role: user, Content: Task: As a researcher in image editing, your task is to generate simple editing instructions based on the given image.

The edit types you can use include:
1) local color change,
2) local texture,
3) adjust (shape change),
4) add,
5) remove,
6) replace,
7) bg,
8) style,
9) action, and
10) text manipulation

**Important**: Ensure that you create a balanced distribution of these edit types when generating the instructions. Each example should utilize a different edit type, and the edit types should be evenly distributed across all examples.

When using the "add" edit type, DO NOT USE vague placements like 'near', 'under', or 'beside', instead, specify the exact location where the object should be placed. For example, instead of "add a castle near the trees" use "add a castle in the clearing between the trees".

Ensure that each instruction is straightforward and points to a single, clear edit change. Avoid complex or multi-step instructions.

**Avoid Redundancy**: Make sure to introduce diversity in the edit instructions.

Given the input image, could you generate simple edit instructions for different possible edit types by following the "format" of examples below and based on what you have seen in the image?

Here are some examples showing the use of various edit types:

Good example 1: {color change example}

Good example 2: {texture change example}

Good example 3: {adjust shape example}

Good example 4: {add example}

Good example 5: {remove example}

Good example 6: {replace example}

Good example 7: {bg example}

Good example 8: {style example}

Good example 9: {action example}

Good example 10: {text manipulation example}

Bad Examples: the edit instructions are hard/impossible to perform well, or mention vague terms that make the editing model struggle to perform well, and you should not follow.

Bad example 1:
- Instruction: make this dog look like it's ready for a formal evening out?
- Type: add
- Reasoning: This instruction is bad because it does not mention the exact changes that are needed to make the dog look like it's ready for a formal evening out.

Bad example 2:
- Instruction: remove the balloon [given an image of only balloons on a white background]
- Type: remove
- Reasoning: This instruction is bad as it removes the only object in the image.

**Important Considerations**:
1. Avoid repetition of specific phrases: Do not reuse examples or themes from the above examples. Create entirely new and diverse themes and scenarios.
2. Logical Flow: Ensure that each instruction is logical and makes sense given the image.
3. Specificity in Insertions: When adding objects, use precise placement (e.g., "in the sky" or "on the lake"). Avoid vague terms like "next to", "around", or "near".
4. Balanced use of edit types: Use a variety of edit types such as [insertion], [replace], [local texture], [shape change], [style], [remove], [local color change], and [bg]. Ensure an even distribution of these edit types across your examples.
5. Diverse scenarios: Introduce variety in the scenarios, such as futuristic, historical, magical, surreal, or natural settings. Avoid overusing common tropes.
6. DO NOT suggest instructions that change a very small/minute part of the image.

Could you now generate 4 examples of **new, creative, and contextually relevant** edit instructions by following the format above? Avoid using the specific phrases, themes, or scenarios from the examples provided above.

**Each example must use a different edit type** from the ones listed above. Also, make sure to use each edit type equally across all generated examples.

Finally, you should make the edit instructions as simple as possible so that the downstream editing model is able to work well.
)";

const char* kValidityFilter = R"(Role: system, Content: You are a helpful assistant and an expert in image editing.
Role: user, Content: Task: As a researcher in image editing, given the input image, edit type, and the edit instruction, your task is to check if a given edit instruction is valid and can be applied to the image. If it is valid, generate a descriptive caption for what the image would look like after applying the edit instruction. If it is not valid, return "invalid" and explain why it is not valid, and output "NA" for the edited image caption.

An edit instruction is invalid if it:
1. mentions to modify/remove/replace an object that is NOT PRESENT in the image.
2. is TOO HARD to make editing model to understand and perform well, e.g., "remove any visible accessories."
3. DOES NOT change the image in any meaningful way, e.g., given the image of a forest, "change the background to a dense forest."

For the "remove" edit type:
- DO NOT mention the object that is removed during the edit in the edited image caption. For example, given an image of a cat in a living room on a sofa with the edit type "remove" and edit instruction: "remove the cat"
Bad Example: A cat is removed from the sofa in a living room.
Good Example: A living room with a sofa.

Given the edit instruction and the original caption:
Edit type: {edit type}
Edit instruction: {simple edit instruction}

Output format:
Validity: ...
Reasoning: ...
Edited image Caption: ...

Please provide a concise but complete caption describing the edited image. Focus on the changes that would be made according to the edit instruction.

Here are some more examples:
Example 1:
- Edit type: bg
- Edit instruction: change the background to a sunset view
- Validity: valid
- Reasoning: The edit instruction is valid because it adjusts the current blue sky to a sunset view, which is a meaningful change.
- Edited image caption: A park with a sunset view. People are walking around in the park.

Example 2:
- Edit type: remove
- Edit instruction: remove the wine glass
- Validity: invalid
- Reasoning: The edit instruction is invalid because it mentions removing a wine glass that is not present in the image.
- Edited image caption: NA

**Important Considerations**:
1. DO NOT use instruction words like replaced, added, removed, modified, etc. in the caption.
2. Keep the caption general to explain any possible images resulting from the edit instruction.

Only output the validity, reasoning, and edited image caption. Do not include any other text or explanations.
)";

const char* kCustomizationFilter = R"(Role: system, Content: You are a helpful assistant and an expert in image personalization/customization.
Role: user, Content: Task:
You are assisting in a research project on image personalization. Your goal is to evaluate whether the SECOND image contains a **single, uniquely identifiable object** prominently positioned near the center of the frame.

- The FIRST image ({image_path1}) is an example of a valid case.
- The specific object category in the second image can be different — focus only on **object uniqueness** and **image composition**.

Good examples include object categories that can be personalized, have unique texture, and are not general objects:
- Backpack, purse, toy, cat, dog, cup, bowl, water bottle, wearables, plushies, bike, car, clocks, etc.

Bad examples include object categories that are general objects, and different instances of the category can not be distinguished:
- Tree, building, door, flowers, food, vegetables, fruits, natural scenes, roads, etc.

**Important Considerations:**
1. The object should be clearly recognizable and **visually distinct** from the background.
2. The object should be **near the center** of the image.
3. The **entire object** should be visible — it should NOT be a tight or zoomed-in crop.
4. The background can be natural but should not be overly cluttered or visually distracting.
5. The image should feature a **single primary object**, not multiple equally prominent objects.

Could you now judge the SECOND image and only provide the output, reasoning, and object name, in the following format:
Output: True/False
Reasoning: Brief explanation
Object Name: The name of the object (e.g., "backpack", "cat", "toy").
)";

const char* kCustomizationBg = R"(Role: system, Content: You are a helpful assistant and an expert in image personalization/customization.
Role: user, Content: Given an image of an object category, you have to suggest three DIVERSE background captions for the object. Provide a detailed description of the background scene. Only suggest plausible backgrounds. DO NOT add the object name in the caption. DO NOT use emotional words in the caption. Be concise and factual but not too short. DO NOT mention the object name in the output captions. If the object is not a thing, but a scene, then output None.

Example background captions for "White plastic bottle" are:
1. near the edge of a marbled kitchen counter, surrounded by a cutting board with chopped vegetables, a salt shaker, and a stainless steel sink in the background.
2. rests on a tiled bathroom shelf, accompanied by a toothbrush holder, a mirror with foggy edges, and a shower curtain partially drawn open.

Example background captions for "a blue truck" are:
1. parked beside a graffiti-covered brick wall under a cloudy sky, with city skyscrapers rising in the background.
2. resting in a grassy field surrounded by wildflowers, with distant mountains and a golden sunset in the background.

Object: {object category name}
Output:
1.
2.
3.
)";

} // namespace

std::string emit_ingestion_prompts(PromptKind kind,
                                   const std::map<std::string, std::string>& slots) {
    switch (kind) {
    case PromptKind::instruction_gen: return fill_slots(kInstructionGen, slots);
    case PromptKind::validity_filter: return fill_slots(kValidityFilter, slots);
    case PromptKind::customization_filter: return fill_slots(kCustomizationFilter, slots);
    case PromptKind::customization_bg: return fill_slots(kCustomizationBg, slots);
    }
    throw InputError("emit_ingestion_prompts: unknown prompt kind");
}

} // namespace editflow::world
