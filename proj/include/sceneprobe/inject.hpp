#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sceneprobe/core.hpp"
#include "sceneprobe/gateway.hpp"
#include "sceneprobe/scene.hpp"

namespace sceneprobe::inject {

using nlohmann::json;
using scene::PlacementRegion;
using scene::SceneImage;
using scene::SurfaceClass;

class DoesNotFitError : public std::runtime_error {
 public:
  explicit DoesNotFitError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Built-in 5x7 dot-matrix font in an 8x12 fixed-width cell (printable ASCII).
// No external font dependency, so renders are bit-stable everywhere.
// ---------------------------------------------------------------------------

namespace font {

inline constexpr int kCellW = 8;
inline constexpr int kCellH = 12;
inline constexpr int kGlyphOffsetX = 1;
inline constexpr int kGlyphOffsetY = 2;

// 95 glyphs (0x20..0x7e), 7 rows each, bit 4 = leftmost column.
inline constexpr std::uint8_t kGlyphs[95][7] = {
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00},  // ' '
    {0x04, 0x04, 0x04, 0x04, 0x04, 0x00, 0x04},  // '!'
    {0x0a, 0x0a, 0x0a, 0x00, 0x00, 0x00, 0x00},  // '"'
    {0x0a, 0x0a, 0x1f, 0x0a, 0x1f, 0x0a, 0x0a},  // '#'
    {0x04, 0x0f, 0x14, 0x0e, 0x05, 0x1e, 0x04},  // '$'
    {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03},  // '%'
    {0x0c, 0x12, 0x14, 0x08, 0x15, 0x12, 0x0d},  // '&'
    {0x04, 0x04, 0x08, 0x00, 0x00, 0x00, 0x00},  // '\''
    {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02},  // '('
    {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08},  // ')'
    {0x00, 0x04, 0x15, 0x0e, 0x15, 0x04, 0x00},  // '*'
    {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00},  // '+'
    {0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08},  // ','
    {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00},  // '-'
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c},  // '.'
    {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00},  // '/'
    {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e},  // '0'
    {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e},  // '1'
    {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f},  // '2'
    {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e},  // '3'
    {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02},  // '4'
    {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e},  // '5'
    {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e},  // '6'
    {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},  // '7'
    {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e},  // '8'
    {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c},  // '9'
    {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00},  // ':'
    {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x04, 0x08},  // ';'
    {0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02},  // '<'
    {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00},  // '='
    {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08},  // '>'
    {0x0e, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04},  // '?'
    {0x0e, 0x11, 0x01, 0x0d, 0x15, 0x15, 0x0e},  // '@'
    {0x0e, 0x11, 0x11, 0x11, 0x1f, 0x11, 0x11},  // 'A'
    {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e},  // 'B'
    {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e},  // 'C'
    {0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c},  // 'D'
    {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f},  // 'E'
    {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10},  // 'F'
    {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f},  // 'G'
    {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11},  // 'H'
    {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e},  // 'I'
    {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c},  // 'J'
    {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11},  // 'K'
    {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f},  // 'L'
    {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11},  // 'M'
    {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},  // 'N'
    {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e},  // 'O'
    {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10},  // 'P'
    {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d},  // 'Q'
    {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11},  // 'R'
    {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e},  // 'S'
    {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},  // 'T'
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e},  // 'U'
    {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04},  // 'V'
    {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0a},  // 'W'
    {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11},  // 'X'
    {0x11, 0x11, 0x11, 0x0a, 0x04, 0x04, 0x04},  // 'Y'
    {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f},  // 'Z'
    {0x0e, 0x08, 0x08, 0x08, 0x08, 0x08, 0x0e},  // '['
    {0x00, 0x10, 0x08, 0x04, 0x02, 0x01, 0x00},  // '\'
    {0x0e, 0x02, 0x02, 0x02, 0x02, 0x02, 0x0e},  // ']'
    {0x04, 0x0a, 0x11, 0x00, 0x00, 0x00, 0x00},  // '^'
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f},  // '_'
    {0x08, 0x04, 0x02, 0x00, 0x00, 0x00, 0x00},  // '`'
    {0x00, 0x00, 0x0e, 0x01, 0x0f, 0x11, 0x0f},  // 'a'
    {0x10, 0x10, 0x1e, 0x11, 0x11, 0x11, 0x1e},  // 'b'
    {0x00, 0x00, 0x0e, 0x10, 0x10, 0x11, 0x0e},  // 'c'
    {0x01, 0x01, 0x0f, 0x11, 0x11, 0x11, 0x0f},  // 'd'
    {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e},  // 'e'
    {0x06, 0x09, 0x08, 0x1c, 0x08, 0x08, 0x08},  // 'f'
    {0x00, 0x0f, 0x11, 0x11, 0x0f, 0x01, 0x0e},  // 'g'
    {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11},  // 'h'
    {0x04, 0x00, 0x0c, 0x04, 0x04, 0x04, 0x0e},  // 'i'
    {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0c},  // 'j'
    {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12},  // 'k'
    {0x0c, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e},  // 'l'
    {0x00, 0x00, 0x1a, 0x15, 0x15, 0x11, 0x11},  // 'm'
    {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11},  // 'n'
    {0x00, 0x00, 0x0e, 0x11, 0x11, 0x11, 0x0e},  // 'o'
    {0x00, 0x00, 0x1e, 0x11, 0x1e, 0x10, 0x10},  // 'p'
    {0x00, 0x00, 0x0f, 0x11, 0x0f, 0x01, 0x01},  // 'q'
    {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10},  // 'r'
    {0x00, 0x00, 0x0e, 0x10, 0x0e, 0x01, 0x1e},  // 's'
    {0x08, 0x08, 0x1c, 0x08, 0x08, 0x09, 0x06},  // 't'
    {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0d},  // 'u'
    {0x00, 0x00, 0x11, 0x11, 0x11, 0x0a, 0x04},  // 'v'
    {0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0a},  // 'w'
    {0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11},  // 'x'
    {0x00, 0x00, 0x11, 0x11, 0x0f, 0x01, 0x0e},  // 'y'
    {0x00, 0x00, 0x1f, 0x02, 0x04, 0x08, 0x1f},  // 'z'
    {0x02, 0x04, 0x04, 0x08, 0x04, 0x04, 0x02},  // '{'
    {0x04, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},  // '|'
    {0x08, 0x04, 0x04, 0x02, 0x04, 0x04, 0x08},  // '}'
    {0x00, 0x00, 0x08, 0x15, 0x02, 0x00, 0x00},  // '~'
};

inline const std::uint8_t* glyph(char c) {
  unsigned idx = static_cast<unsigned char>(c);
  if (idx < 0x20 || idx > 0x7e) idx = '?';
  return kGlyphs[idx - 0x20];
}

}  // namespace font

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct RenderStyle {
  int font_size = 12;  // glyph cell height in pixels (integer-scaled from 12)
  Rgb glyph_color{255, 255, 255};
  std::optional<Rgb> background_panel = Rgb{24, 24, 24};
  double alpha = 0.85;
  int padding = 2;
  bool line_wrap = true;

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must lie in [0,1]");
    if (font_size < 10) throw std::invalid_argument("font_size must be >= 10");
    if (padding < 0) throw std::invalid_argument("padding must be >= 0");
    if (background_panel && *background_panel == glyph_color) {
      throw std::invalid_argument("glyph color must differ from the panel color");
    }
  }

  int scale() const { return std::max(1, font_size / font::kCellH); }
  int cell_w() const { return font::kCellW * scale(); }
  int cell_h() const { return font::kCellH * scale(); }

  json to_json() const {
    json j{{"font_size", font_size},
           {"glyph_color", {glyph_color.r, glyph_color.g, glyph_color.b}},
           {"alpha", alpha},
           {"padding", padding},
           {"line_wrap", line_wrap}};
    if (background_panel) {
      j["background_panel"] = {background_panel->r, background_panel->g, background_panel->b};
    }
    return j;
  }
  static RenderStyle from_json(const json& j) {
    RenderStyle s;
    s.font_size = j.value("font_size", 12);
    if (j.contains("glyph_color")) {
      const auto& c = j.at("glyph_color");
      s.glyph_color = Rgb{c[0].get<std::uint8_t>(), c[1].get<std::uint8_t>(), c[2].get<std::uint8_t>()};
    }
    if (j.contains("background_panel")) {
      if (j.at("background_panel").is_null()) {
        s.background_panel.reset();
      } else {
        const auto& c = j.at("background_panel");
        s.background_panel =
            Rgb{c[0].get<std::uint8_t>(), c[1].get<std::uint8_t>(), c[2].get<std::uint8_t>()};
      }
    }
    s.alpha = j.value("alpha", 0.85);
    s.padding = j.value("padding", 2);
    s.line_wrap = j.value("line_wrap", true);
    s.validate();
    return s;
  }
};

struct RenderedScene {
  SceneImage image;               // the perturbed frame
  std::string base_scene_id;      // content digest of the unmodified base
  std::string injected_text;      // exact t_adv, the OCR ground truth
  PlacementRegion region;
  RenderStyle style;
  std::vector<std::uint8_t> mask;  // width*height plane, 1 = touched pixel
  std::size_t affected_count = 0;

  bool affected(int x, int y) const {
    return mask[static_cast<std::size_t>(y) * image.width + x] != 0;
  }

  json manifest() const {
    return json{{"base_scene_id", base_scene_id},
                {"injected_text", injected_text},
                {"region", region.to_json()},
                {"style", style.to_json()},
                {"output_digest", image.content_digest()}};
  }
};

// ---------------------------------------------------------------------------
// Blending
// ---------------------------------------------------------------------------

/// Per-channel alpha blend, rounded half-away-from-zero. The 1e-9 boundary
/// tolerance makes decimal alphas behave as written (0.3*255 -> 76.5 -> 77)
/// despite binary representation error.
inline int blend_channel(int base, int overlay, double alpha) {
  double v = alpha * overlay + (1.0 - alpha) * base;
  int rounded = static_cast<int>(std::floor(v + 0.5 + 1e-9));
  return std::clamp(rounded, 0, 255);
}

inline Rgb alpha_blend(Rgb base, Rgb overlay, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must lie in [0,1]");
  return Rgb{static_cast<std::uint8_t>(blend_channel(base.r, overlay.r, alpha)),
             static_cast<std::uint8_t>(blend_channel(base.g, overlay.g, alpha)),
             static_cast<std::uint8_t>(blend_channel(base.b, overlay.b, alpha))};
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> wrap_text(const std::string& text, int cols, bool line_wrap) {
  std::vector<std::string> lines;
  if (!line_wrap) {
    lines.push_back(text);
    return lines;
  }
  std::string line;
  for (const auto& word : split_ws(text)) {
    std::string w = word;
    while (static_cast<int>(w.size()) > cols) {  // hard-break oversized words
      if (!line.empty()) {
        lines.push_back(line);
        line.clear();
      }
      lines.push_back(w.substr(0, static_cast<std::size_t>(cols)));
      w = w.substr(static_cast<std::size_t>(cols));
    }
    if (w.empty()) continue;
    if (line.empty()) {
      line = w;
    } else if (static_cast<int>(line.size() + 1 + w.size()) <= cols) {
      line += " " + w;
    } else {
      lines.push_back(line);
      line = w;
    }
  }
  if (!line.empty()) lines.push_back(line);
  return lines;
}

/// The camera surface renders as a banner across the top of the frame rather
/// than covering the whole image.
inline Rect effective_rect(const PlacementRegion& region, const SceneImage& base,
                           const RenderStyle& style) {
  if (region.surface != SurfaceClass::camera) return region.rect;
  int banner_h = std::max(base.height * 3 / 20, style.cell_h() + 2 * style.padding);
  banner_h = std::min(banner_h, base.height);
  return Rect{0, 0, base.width, banner_h};
}

}  // namespace detail

/// Rasterizes t_adv into a copy of the base frame at the given region. The
/// base image is never modified. The output sidecar gains the rendered text,
/// which is what offline OCR/planner stubs perceive.
inline RenderedScene render_instruction(const SceneImage& base, const std::string& text,
                                        const PlacementRegion& region, const RenderStyle& style) {
  if (text.empty()) throw std::invalid_argument("render_instruction: text must be non-empty");
  if (!base.well_formed()) throw std::invalid_argument("render_instruction: malformed base image");
  style.validate();
  Rect rect = detail::effective_rect(region, base, style);
  if (!rect.within(base.width, base.height)) {
    throw std::invalid_argument("render_instruction: region outside image bounds");
  }

  const int cell_w = style.cell_w();
  const int cell_h = style.cell_h();
  const int scale = style.scale();
  const int cols = (rect.w - 2 * style.padding) / cell_w;
  const int rows = (rect.h - 2 * style.padding) / cell_h;
  if (cols <= 0 || rows <= 0) {
    throw DoesNotFitError("region too small for even one glyph");
  }
  auto lines = detail::wrap_text(text, cols, style.line_wrap);
  if (static_cast<int>(lines.size()) > rows) {
    throw DoesNotFitError("text needs " + std::to_string(lines.size()) + " lines, region holds " +
                          std::to_string(rows));
  }
  for (const auto& l : lines) {
    if (static_cast<int>(l.size()) > cols) {
      throw DoesNotFitError("line exceeds region width");  // only without wrapping
    }
  }

  RenderedScene out;
  out.image = base;
  out.base_scene_id = base.content_digest();
  out.injected_text = text;
  out.region = region;
  out.style = style;
  out.mask.assign(static_cast<std::size_t>(base.width) * base.height, 0);

  auto touch = [&](int x, int y) {
    auto& m = out.mask[static_cast<std::size_t>(y) * base.width + x];
    if (!m) {
      m = 1;
      ++out.affected_count;
    }
  };

  // Panel behind the text, then glyphs on top, both per alpha_blend.
  if (style.background_panel) {
    int used_cols = 0;
    for (const auto& l : lines) used_cols = std::max(used_cols, static_cast<int>(l.size()));
    int panel_w = std::min(rect.w, used_cols * cell_w + 2 * style.padding);
    int panel_h = std::min(rect.h, static_cast<int>(lines.size()) * cell_h + 2 * style.padding);
    for (int y = rect.y; y < rect.y + panel_h; ++y) {
      for (int x = rect.x; x < rect.x + panel_w; ++x) {
        out.image.set(x, y, alpha_blend(out.image.at(x, y), *style.background_panel, style.alpha));
        touch(x, y);
      }
    }
  }

  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::string& line = lines[li];
    for (std::size_t ci = 0; ci < line.size(); ++ci) {
      const std::uint8_t* g = font::glyph(line[ci]);
      int ox = rect.x + style.padding + static_cast<int>(ci) * cell_w;
      int oy = rect.y + style.padding + static_cast<int>(li) * cell_h;
      for (int gy = 0; gy < 7; ++gy) {
        for (int gx = 0; gx < 5; ++gx) {
          if (!(g[gy] & (0x10 >> gx))) continue;
          for (int sy = 0; sy < scale; ++sy) {
            for (int sx = 0; sx < scale; ++sx) {
              int px = ox + (font::kGlyphOffsetX + gx) * scale + sx;
              int py = oy + (font::kGlyphOffsetY + gy) * scale + sy;
              out.image.set(px, py, alpha_blend(out.image.at(px, py), style.glyph_color, style.alpha));
              touch(px, py);
            }
          }
        }
      }
    }
  }

  // Stub backends perceive injected text through the sidecar.
  json sidecar = json::parse(base.sidecar.empty() ? "{}" : base.sidecar, nullptr, false);
  if (!sidecar.is_object()) sidecar = json::object();
  sidecar["rendered_text"] = text;
  out.image.sidecar = sidecar.dump();
  out.image.source_id = base.source_id;
  return out;
}

// ---------------------------------------------------------------------------
// OCR readability
// ---------------------------------------------------------------------------

struct OcrReadability {
  double score = 0.0;
  bool pass = false;
  std::string extracted;
};

/// Character-level similarity between the OCR extraction and the injected
/// ground truth, both lowercased and whitespace-collapsed.
inline OcrReadability ocr_readability(gw::Gateway& gateway, const RenderedScene& rendered,
                                      double pass_threshold = 0.9) {
  OcrReadability result;
  result.extracted = gateway.ocr_extract(scene::to_image_ref(rendered.image));
  std::string a = collapse_ws(to_lower(rendered.injected_text));
  std::string b = collapse_ws(to_lower(result.extracted));
  std::size_t denom = std::max(a.size(), b.size());
  result.score = denom == 0 ? 1.0
                            : 1.0 - static_cast<double>(levenshtein(a, b)) /
                                        static_cast<double>(denom);
  result.pass = result.score >= pass_threshold;
  return result;
}

}  // namespace sceneprobe::inject
