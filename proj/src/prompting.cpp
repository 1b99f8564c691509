#include <eagle/prompting.hpp>

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include <eagle/errors.hpp>

namespace eagle {

namespace {
using json = nlohmann::json;
}

PromptBundle build_prompt(const ConfidenceVerdict& verdict, std::vector<BoundingBox> boxes,
                          std::optional<std::string> template_image_id, PromptStyle style) {
  PromptBundle bundle;
  bundle.system_instruction = kSystemInstruction;
  bundle.template_image_id = std::move(template_image_id);
  bundle.question = kQuestion;

  if (verdict.abnormal) {
    bundle.prior = TextualPrior::anomalous_prior;
    bundle.prior_text = style == PromptStyle::appendix ? kAnomalousPrior : kShortAnomalousPrior;
    bundle.visual_boxes = std::move(boxes);
    bundle.missing_boxes = bundle.visual_boxes.empty();
  } else {
    bundle.prior = TextualPrior::normal_prior;
    bundle.prior_text = style == PromptStyle::appendix ? kNormalPrior : kShortNormalPrior;
    // Visual prompts are attached only to abnormal verdicts.
    bundle.visual_boxes.clear();
  }
  return bundle;
}

Index nearest_by_cosine(const VectorD& query, const MatrixD& pooled) {
  if (pooled.rows() == 0) throw ArgumentError("template retrieval needs a non-empty training set");
  const double query_norm = query.norm();
  double best = -2.0;
  Index best_index = 0;
  for (Index i = 0; i < pooled.rows(); ++i) {
    const double denom = query_norm * pooled.row(i).norm();
    const double cos = denom > 0.0 ? query.dot(pooled.row(i)) / denom : 0.0;
    if (cos > best) {
      best = cos;
      best_index = i;
    }
  }
  return best_index;
}

Index retrieve_template(const FeatureGrid& query, std::span<const FeatureGrid> train) {
  if (train.empty()) throw ArgumentError("template retrieval needs a non-empty training set");

  MatrixD pooled(static_cast<Index>(train.size()), query.channels);
  for (std::size_t i = 0; i < train.size(); ++i)
    pooled.row(static_cast<Index>(i)) = train[i].patches.cast<double>().colwise().mean();
  return nearest_by_cosine(query.patches.cast<double>().colwise().mean().transpose(), pooled);
}

ChatRequest build_chat_request(const PromptBundle& bundle, const std::string& model,
                               const std::string& query_image_id,
                               const std::optional<std::string>& annotated_image_ref) {
  ChatRequest request;
  request.model = model;
  request.image_id = query_image_id;

  ChatMessage system;
  system.role = "system";
  system.parts.push_back({ContentPart::Kind::text, bundle.system_instruction});
  request.messages.push_back(std::move(system));

  ChatMessage user;
  user.role = "user";
  if (bundle.template_image_id)
    user.parts.push_back({ContentPart::Kind::image, "eagle://image/" + *bundle.template_image_id});
  user.parts.push_back({ContentPart::Kind::image, "eagle://image/" + query_image_id});

  if (!bundle.visual_boxes.empty()) {
    if (annotated_image_ref) {
      user.parts.push_back({ContentPart::Kind::image, *annotated_image_ref});
    } else {
      // No pixel data on hand: the boxes travel as text coordinates.
      std::ostringstream text;
      text << "Red bounding boxes (pixel coordinates x0,y0,x1,y1):";
      for (const auto& box : bundle.visual_boxes)
        text << " [" << box.x0 << "," << box.y0 << "," << box.x1 << "," << box.y1 << "]";
      user.parts.push_back({ContentPart::Kind::text, text.str()});
    }
  }

  user.parts.push_back({ContentPart::Kind::text, bundle.prior_text});
  request.messages.push_back(std::move(user));
  return request;
}

std::string chat_request_to_wire_json(const ChatRequest& request) {
  json body;
  body["model"] = request.model;
  body["messages"] = json::array();
  for (const auto& message : request.messages) {
    json m;
    m["role"] = message.role;
    if (message.parts.size() == 1 && message.parts[0].kind == ContentPart::Kind::text) {
      m["content"] = message.parts[0].value;
    } else {
      m["content"] = json::array();
      for (const auto& part : message.parts) {
        if (part.kind == ContentPart::Kind::text) {
          m["content"].push_back({{"type", "text"}, {"text", part.value}});
        } else {
          m["content"].push_back({{"type", "image_url"}, {"image_url", {{"url", part.value}}}});
        }
      }
    }
    body["messages"].push_back(std::move(m));
  }
  return body.dump();
}

std::string to_string(Parsed p) {
  switch (p) {
    case Parsed::defect_yes: return "defect_yes";
    case Parsed::defect_no: return "defect_no";
    case Parsed::unparseable: return "unparseable";
  }
  return "unparseable";
}

namespace {

std::vector<std::string> tokenize_lower(const std::string& raw) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : raw) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

bool is_yes_keyword(const std::string& token) {
  return token == "yes" || token.rfind("defect", 0) == 0 || token.rfind("abnormal", 0) == 0 ||
         token.rfind("anomal", 0) == 0;
}

}  // namespace

Parsed parse_answer(const std::string& raw) {
  const auto tokens = tokenize_lower(raw);
  if (tokens.empty()) return Parsed::unparseable;

  // A leading standalone option letter decides.
  if (tokens[0] == "a") return Parsed::defect_yes;
  if (tokens[0] == "b") return Parsed::defect_no;

  // Negation phrases outrank the keyword list ("no defect" is a no).
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    if ((tokens[i] == "no" || tokens[i] == "not" || tokens[i] == "without") &&
        is_yes_keyword(tokens[i + 1]))
      return Parsed::defect_no;
  }

  for (const auto& token : tokens)
    if (is_yes_keyword(token)) return Parsed::defect_yes;

  for (const auto& token : tokens)
    if (token == "no" || token == "normal") return Parsed::defect_no;

  return Parsed::unparseable;
}

ModelAnswer send_to_model(const PromptBundle& bundle, ModelClient& client,
                          const std::string& model, const std::string& query_image_id,
                          bool low_confidence,
                          const std::optional<std::string>& annotated_image_ref) {
  ChatRequest request = build_chat_request(bundle, model, query_image_id, annotated_image_ref);
  request.low_confidence = low_confidence;

  const ChatResponse response = client.complete(request);
  if (response.raw_text.empty())
    throw EndpointError("empty completion for image " + query_image_id);

  ModelAnswer answer;
  answer.raw_text = response.raw_text;
  answer.parsed = parse_answer(response.raw_text);
  return answer;
}

RgbImage::RgbImage(Index w, Index h, std::uint8_t r, std::uint8_t g, std::uint8_t b)
    : width(w), height(h), pixels(static_cast<std::size_t>(w * h * 3)) {
  for (Index p = 0; p < w * h; ++p) {
    pixels[static_cast<std::size_t>(3 * p)] = r;
    pixels[static_cast<std::size_t>(3 * p + 1)] = g;
    pixels[static_cast<std::size_t>(3 * p + 2)] = b;
  }
}

namespace {

void fill_rect(RgbImage& image, Index x0, Index y0, Index x1, Index y1) {
  x0 = std::max<Index>(x0, 0);
  y0 = std::max<Index>(y0, 0);
  x1 = std::min(x1, image.width - 1);
  y1 = std::min(y1, image.height - 1);
  for (Index y = y0; y <= y1; ++y) {
    for (Index x = x0; x <= x1; ++x) {
      const std::size_t p = static_cast<std::size_t>(3 * (y * image.width + x));
      image.pixels[p] = 255;
      image.pixels[p + 1] = 0;
      image.pixels[p + 2] = 0;
    }
  }
}

}  // namespace

void draw_red_boxes(RgbImage& image, std::span<const BoundingBox> boxes, Index thickness) {
  if (image.width <= 0 || image.height <= 0) throw ArgumentError("empty raster image");
  for (const auto& box : boxes) {
    const Index t = std::max<Index>(1, thickness);
    fill_rect(image, box.x0 - t + 1, box.y0 - t + 1, box.x1 + t - 1, box.y0);        // top
    fill_rect(image, box.x0 - t + 1, box.y1, box.x1 + t - 1, box.y1 + t - 1);        // bottom
    fill_rect(image, box.x0 - t + 1, box.y0, box.x0, box.y1);                        // left
    fill_rect(image, box.x1, box.y0, box.x1 + t - 1, box.y1);                        // right
  }
}

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

}  // namespace eagle
