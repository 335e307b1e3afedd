#pragma once

// A trained scene: anchors, shared heads, the position normalization box and
// the settings needed to render it.

#include <memory>

#include "ahgs/decoder.hpp"
#include "ahgs/image.hpp"
#include "ahgs/rasterizer.hpp"
#include "ahgs/scene.hpp"

namespace ahgs {

struct SceneModel {
  ModelConfig config;
  AnchorSet anchors;
  MlpHeads heads;
  SceneBounds bounds;
  RasterSettings raster;
  double opacity_threshold = 0.005;
};

struct ViewRender {
  ad::Tensor image;  // (3, H, W)
  DecodedGaussians gaussians;
  std::shared_ptr<RenderAux> aux;
};

/// Decodes the visible anchors for `cam` and rasterizes them on the tape.
inline ViewRender render_view(const SceneModel& model, const Camera& cam) {
  ViewRender out;
  const ViewContext view = visible_anchors(model.anchors, cam);
  out.gaussians = decode_view(model.anchors, view, model.heads, model.bounds, model.config, model.opacity_threshold);
  out.aux = std::make_shared<RenderAux>();
  const auto& g = out.gaussians;
  out.image = render(g.means, g.opacity, g.rotation, g.scale, g.color, cam, model.raster, out.aux);
  return out;
}

inline ImageBuffer render_image(const SceneModel& model, const Camera& cam) {
  return from_tensor(render_view(model, cam).image.detach());
}

}  // namespace ahgs
