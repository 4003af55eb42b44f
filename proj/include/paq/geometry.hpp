#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "paq/tensor.hpp"

namespace paq {

// Axis-aligned box in normalized center-size form.
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;

    double x1() const { return cx - w / 2; }
    double x2() const { return cx + w / 2; }
    double y1() const { return cy - h / 2; }
    double y2() const { return cy + h / 2; }
    double area() const { return w * h; }

    static Box from_corners(double x1, double y1, double x2, double y2) {
        return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
    }
};

namespace detail {
inline void require_valid(const Box& b, const char* op) {
    if (!(b.w > 0.0) || !(b.h > 0.0))
        throw std::invalid_argument(std::string(op) + ": degenerate box (w,h must be > 0)");
}
}  // namespace detail

inline double iou(const Box& a, const Box& b) {
    detail::require_valid(a, "iou");
    detail::require_valid(b, "iou");
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

inline double giou(const Box& a, const Box& b) {
    detail::require_valid(a, "giou");
    detail::require_valid(b, "giou");
    const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
    const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    const double ew = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
    const double eh = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
    const double enclose = ew * eh;
    return inter / uni - (enclose - uni) / enclose;
}

inline double l1_box(const Box& a, const Box& b) {
    return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) +
           std::abs(a.h - b.h);
}

// ---- differentiable variants over a row of an n x 4 (cx,cy,w,h) tensor ----

inline Box box_from_row(const Tensor& boxes, int i) {
    return {boxes.at(i, 0), boxes.at(i, 1), boxes.at(i, 2), boxes.at(i, 3)};
}

inline Tensor l1_box_t(const Tensor& boxes, int i, const Box& gt) {
    Tensor s = abs_t(sub(pick(boxes, i, 0), Tensor::scalar(gt.cx)));
    s = add(s, abs_t(sub(pick(boxes, i, 1), Tensor::scalar(gt.cy))));
    s = add(s, abs_t(sub(pick(boxes, i, 2), Tensor::scalar(gt.w))));
    s = add(s, abs_t(sub(pick(boxes, i, 3), Tensor::scalar(gt.h))));
    return s;
}

inline Tensor iou_t(const Tensor& boxes, int i, const Box& gt) {
    detail::require_valid(gt, "iou_t");
    Tensor cx = pick(boxes, i, 0), cy = pick(boxes, i, 1);
    Tensor w = pick(boxes, i, 2), h = pick(boxes, i, 3);
    Tensor x1 = sub(cx, scale(w, 0.5)), x2 = add(cx, scale(w, 0.5));
    Tensor y1 = sub(cy, scale(h, 0.5)), y2 = add(cy, scale(h, 0.5));
    Tensor iw = relu(sub(vmin(x2, Tensor::scalar(gt.x2())), vmax(x1, Tensor::scalar(gt.x1()))));
    Tensor ih = relu(sub(vmin(y2, Tensor::scalar(gt.y2())), vmax(y1, Tensor::scalar(gt.y1()))));
    Tensor inter = mul(iw, ih);
    Tensor uni = sub(add(mul(w, h), Tensor::scalar(gt.area())), inter);
    return div(inter, uni);
}

inline Tensor giou_t(const Tensor& boxes, int i, const Box& gt) {
    detail::require_valid(gt, "giou_t");
    Tensor cx = pick(boxes, i, 0), cy = pick(boxes, i, 1);
    Tensor w = pick(boxes, i, 2), h = pick(boxes, i, 3);
    Tensor x1 = sub(cx, scale(w, 0.5)), x2 = add(cx, scale(w, 0.5));
    Tensor y1 = sub(cy, scale(h, 0.5)), y2 = add(cy, scale(h, 0.5));
    Tensor gx1 = Tensor::scalar(gt.x1()), gx2 = Tensor::scalar(gt.x2());
    Tensor gy1 = Tensor::scalar(gt.y1()), gy2 = Tensor::scalar(gt.y2());

    Tensor iw = relu(sub(vmin(x2, gx2), vmax(x1, gx1)));
    Tensor ih = relu(sub(vmin(y2, gy2), vmax(y1, gy1)));
    Tensor inter = mul(iw, ih);
    Tensor uni = sub(add(mul(w, h), Tensor::scalar(gt.area())), inter);
    Tensor enclose = mul(sub(vmax(x2, gx2), vmin(x1, gx1)),
                         sub(vmax(y2, gy2), vmin(y1, gy1)));
    return sub(div(inter, uni), div(sub(enclose, uni), enclose));
}

inline Tensor giou_loss_t(const Tensor& boxes, int i, const Box& gt) {
    return sub(Tensor::scalar(1.0), giou_t(boxes, i, gt));
}

}  // namespace paq
