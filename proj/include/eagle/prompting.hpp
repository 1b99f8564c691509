#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <eagle/dbt.hpp>
#include <eagle/scoring.hpp>

namespace eagle {

// ---------------------------------------------------------------------------
// Prompt constants. The two prior strings are bound by content: the one that
// mentions red bounding boxes accompanies abnormal verdicts.
// ---------------------------------------------------------------------------

inline constexpr const char* kSystemInstruction =
    "You are my industrial image inspection assistant. You will receive multiple images "
    "simultaneously, including a template image, a query image, and a query image with red "
    "bounding boxes. Based on the input images and the accompanying textual information, answer "
    "the given question. The question is multiple-choice. Respond only with the letter of the "
    "correct option (e.g., A, B, C, or D). Do not include explanations or extra text.";

inline constexpr const char* kAnomalousPrior =
    "The query image is predicted as anomalous, The position of the red bounding box on the "
    "query image is the predicted defect location. Answer with the option's letter from the "
    "given choices directly! Is there any defect in the object? A. Yes. B. No.";

inline constexpr const char* kNormalPrior =
    "The query image is predicted as normal. Answer with the option's letter from the given "
    "choices directly! Is there any defect in the object? A. Yes. B. No.";

// Shorter phrasings, selectable by config.
inline constexpr const char* kShortAnomalousPrior = "This image is predicted as abnormal.";
inline constexpr const char* kShortNormalPrior = "This image is predicted as normal.";

inline constexpr const char* kQuestion = "Is there any defect in the object?";
inline constexpr const char* kQuestionWithOptions =
    "Answer with the option's letter from the given choices directly! Is there any defect in "
    "the object? A. Yes. B. No.";

enum class PromptStyle { appendix, short_form };
enum class TextualPrior { anomalous_prior, normal_prior };

struct PromptBundle {
  std::string system_instruction;
  TextualPrior prior = TextualPrior::normal_prior;
  std::string prior_text;  // resolved prior string (embeds the question in appendix style)
  std::vector<BoundingBox> visual_boxes;  // non-empty only for abnormal verdicts
  std::optional<std::string> template_image_id;
  std::string question;
  bool missing_boxes = false;  // abnormal verdict arrived without any boxes
};

// Abnormal verdicts keep their boxes and get the anomalous prior; normal
// verdicts get the normal prior and boxes are stripped even if supplied.
PromptBundle build_prompt(const ConfidenceVerdict& verdict, std::vector<BoundingBox> boxes,
                          std::optional<std::string> template_image_id = {},
                          PromptStyle style = PromptStyle::appendix);

// Index of the training grid maximizing cosine similarity between channel-wise
// mean-pooled feature vectors; lowest index wins ties.
Index retrieve_template(const FeatureGrid& query, std::span<const FeatureGrid> train);

// Row of `pooled` most cosine-similar to `query` (zero-norm vectors score 0).
Index nearest_by_cosine(const VectorD& query, const MatrixD& pooled);

// ---------------------------------------------------------------------------
// Chat request / response
// ---------------------------------------------------------------------------

struct ContentPart {
  enum class Kind { text, image };
  Kind kind = Kind::text;
  std::string value;  // text payload, or image reference (URI)
};

struct ChatMessage {
  std::string role;
  std::vector<ContentPart> parts;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;

  // Out-of-band metadata: never serialized to the wire; consumed by stub
  // clients and the request log.
  std::string image_id;
  bool low_confidence = false;
};

struct ChatResponse {
  std::string raw_text;
  int status = 0;
  double latency_seconds = 0.0;
};

// Serialized message order: system instruction; template image; query image;
// annotated query image when one was rendered; box coordinates as text when
// boxes exist but no pixels were available; the textual prior (which carries
// the question). Identical bundles serialize identically.
ChatRequest build_chat_request(const PromptBundle& bundle, const std::string& model,
                               const std::string& query_image_id,
                               const std::optional<std::string>& annotated_image_ref = {});

// Wire-format JSON (OpenAI-compatible chat completions body).
std::string chat_request_to_wire_json(const ChatRequest& request);

enum class Parsed { defect_yes, defect_no, unparseable };

std::string to_string(Parsed p);

// Case-insensitive, total, deterministic. Priority: a leading standalone
// option letter A/B decides; then negation phrases ("no defect"); then the
// yes-variant keywords; then standalone "no"/"normal".
Parsed parse_answer(const std::string& raw);

class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

struct ModelAnswer {
  std::string raw_text;
  Parsed parsed = Parsed::unparseable;
};

// Sends the bundle through the client and parses the reply. Throws
// EndpointError on empty completions; transport retries live in the client.
ModelAnswer send_to_model(const PromptBundle& bundle, ModelClient& client,
                          const std::string& model, const std::string& query_image_id,
                          bool low_confidence = false,
                          const std::optional<std::string>& annotated_image_ref = {});

// ---------------------------------------------------------------------------
// Minimal rasterizer for the visual prompt, used when pixel data is on hand.
// ---------------------------------------------------------------------------

struct RgbImage {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> pixels;  // 3 bytes per pixel, row-major

  RgbImage() = default;
  RgbImage(Index w, Index h, std::uint8_t r = 0, std::uint8_t g = 0, std::uint8_t b = 0);
};

// Draws `thickness`-pixel red rectangle outlines, clipped to the image.
void draw_red_boxes(RgbImage& image, std::span<const BoundingBox> boxes, Index thickness = 3);

void write_ppm(const RgbImage& image, const std::filesystem::path& path);

}  // namespace eagle
