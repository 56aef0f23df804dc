#include "lmbis/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

namespace lmbis {

namespace {

void check_rotation(int degrees) {
    if (degrees < -90 || degrees > 90 || degrees % 10 != 0)
        throw std::invalid_argument("rotation must be a multiple of 10 in [-90, 90], got " +
                                    std::to_string(degrees));
}

void check_resize(int in_h, int in_w, int out_h, int out_w) {
    if (in_h <= 0 || in_w <= 0) throw std::invalid_argument("resize: empty input");
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: empty output");
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    check_resize(image.height(), image.width(), out_h, out_w);
    if (image.height() == out_h && image.width() == out_w) return image;

    Tensor out(image.batch(), image.channels(), out_h, out_w);
    const float sy = static_cast<float>(image.height()) / out_h;
    const float sx = static_cast<float>(image.width()) / out_w;
    for (int n = 0; n < image.batch(); ++n) {
        for (int c = 0; c < image.channels(); ++c) {
            for (int y = 0; y < out_h; ++y) {
                const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.0f,
                                            static_cast<float>(image.height() - 1));
                const int y0 = static_cast<int>(fy);
                const int y1 = std::min(y0 + 1, image.height() - 1);
                const float wy = fy - y0;
                for (int x = 0; x < out_w; ++x) {
                    const float fx = std::clamp((x + 0.5f) * sx - 0.5f, 0.0f,
                                                static_cast<float>(image.width() - 1));
                    const int x0 = static_cast<int>(fx);
                    const int x1 = std::min(x0 + 1, image.width() - 1);
                    const float wx = fx - x0;
                    const float top = image.at(n, c, y0, x0) * (1 - wx) +
                                      image.at(n, c, y0, x1) * wx;
                    const float bot = image.at(n, c, y1, x0) * (1 - wx) +
                                      image.at(n, c, y1, x1) * wx;
                    out.at(n, c, y, x) = top * (1 - wy) + bot * wy;
                }
            }
        }
    }
    return out;
}

Mask resize_nearest(const Mask& mask, int out_h, int out_w) {
    check_resize(mask.height, mask.width, out_h, out_w);
    if (mask.height == out_h && mask.width == out_w) return mask;

    Mask out(out_h, out_w);
    const float sy = static_cast<float>(mask.height) / out_h;
    const float sx = static_cast<float>(mask.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const int src_y = std::min(static_cast<int>((y + 0.5f) * sy), mask.height - 1);
        for (int x = 0; x < out_w; ++x) {
            const int src_x = std::min(static_cast<int>((x + 0.5f) * sx), mask.width - 1);
            out.at(y, x) = mask.at(src_y, src_x);
        }
    }
    return out;
}

Tensor rotate_bilinear(const Tensor& image, int degrees) {
    check_rotation(degrees);
    if (degrees == 0) return image;

    const double rad = degrees * std::numbers::pi / 180.0;
    const float cs = static_cast<float>(std::cos(rad));
    const float sn = static_cast<float>(std::sin(rad));
    const float cy = (image.height() - 1) / 2.0f;
    const float cx = (image.width() - 1) / 2.0f;

    Tensor out(image.shape());
    for (int n = 0; n < image.batch(); ++n) {
        for (int c = 0; c < image.channels(); ++c) {
            for (int y = 0; y < image.height(); ++y) {
                for (int x = 0; x < image.width(); ++x) {
                    // inverse map: rotate the destination coordinate by -degrees
                    const float dx = x - cx, dy = y - cy;
                    const float sx = cs * dx + sn * dy + cx;
                    const float sy = -sn * dx + cs * dy + cy;
                    if (sx < 0 || sy < 0 || sx > image.width() - 1 || sy > image.height() - 1)
                        continue;  // fill 0
                    const int x0 = static_cast<int>(sx);
                    const int y0 = static_cast<int>(sy);
                    const int x1 = std::min(x0 + 1, image.width() - 1);
                    const int y1 = std::min(y0 + 1, image.height() - 1);
                    const float wx = sx - x0, wy = sy - y0;
                    const float top = image.at(n, c, y0, x0) * (1 - wx) +
                                      image.at(n, c, y0, x1) * wx;
                    const float bot = image.at(n, c, y1, x0) * (1 - wx) +
                                      image.at(n, c, y1, x1) * wx;
                    out.at(n, c, y, x) = top * (1 - wy) + bot * wy;
                }
            }
        }
    }
    return out;
}

Mask rotate_nearest(const Mask& mask, int degrees) {
    check_rotation(degrees);
    if (degrees == 0) return mask;

    const double rad = degrees * std::numbers::pi / 180.0;
    const float cs = static_cast<float>(std::cos(rad));
    const float sn = static_cast<float>(std::sin(rad));
    const float cy = (mask.height - 1) / 2.0f;
    const float cx = (mask.width - 1) / 2.0f;

    Mask out(mask.height, mask.width);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            const float dx = x - cx, dy = y - cy;
            const int sx = static_cast<int>(std::lround(cs * dx + sn * dy + cx));
            const int sy = static_cast<int>(std::lround(-sn * dx + cs * dy + cy));
            if (sx < 0 || sy < 0 || sx >= mask.width || sy >= mask.height) continue;
            out.at(y, x) = mask.at(sy, sx);
        }
    }
    return out;
}

Tensor contrast_adjust(const Tensor& image, float factor) {
    Tensor out(image.shape());
    const std::size_t plane = static_cast<std::size_t>(image.height()) * image.width();
    for (int n = 0; n < image.batch(); ++n) {
        for (int c = 0; c < image.channels(); ++c) {
            double sum = 0.0;
            for (int y = 0; y < image.height(); ++y)
                for (int x = 0; x < image.width(); ++x) sum += image.at(n, c, y, x);
            const float mu = static_cast<float>(sum / plane);
            for (int y = 0; y < image.height(); ++y)
                for (int x = 0; x < image.width(); ++x)
                    out.at(n, c, y, x) =
                        std::clamp(mu + factor * (image.at(n, c, y, x) - mu), 0.0f, 1.0f);
        }
    }
    return out;
}

namespace {

// offsets of a 5-pixel-diameter disc
const std::vector<std::pair<int, int>>& disc_offsets() {
    static const std::vector<std::pair<int, int>> offsets = [] {
        std::vector<std::pair<int, int>> o;
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx)
                if (dx * dx + dy * dy <= 6) o.emplace_back(dy, dx);
        return o;
    }();
    return offsets;
}

Mask dilate(const Mask& in) {
    Mask out(in.height, in.width);
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            if (!in.at(y, x)) continue;
            for (auto [dy, dx] : disc_offsets()) {
                const int ny = y + dy, nx = x + dx;
                if (ny >= 0 && nx >= 0 && ny < in.height && nx < in.width) out.at(ny, nx) = 1;
            }
        }
    }
    return out;
}

Mask erode(const Mask& in) {
    Mask out(in.height, in.width);
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            bool all = true;
            for (auto [dy, dx] : disc_offsets()) {
                const int ny = y + dy, nx = x + dx;
                // out-of-canvas neighbors do not veto; closing must not
                // shrink a mask that touches the frame
                if (ny < 0 || nx < 0 || ny >= in.height || nx >= in.width) continue;
                if (!in.at(ny, nx)) {
                    all = false;
                    break;
                }
            }
            out.at(y, x) = all ? 1 : 0;
        }
    }
    return out;
}

Mask largest_component(const Mask& in) {
    Mask seen(in.height, in.width);
    Mask best(in.height, in.width);
    std::size_t best_size = 0;
    std::vector<std::pair<int, int>> stack, current;

    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            if (!in.at(y, x) || seen.at(y, x)) continue;
            current.clear();
            stack.assign(1, {y, x});
            seen.at(y, x) = 1;
            while (!stack.empty()) {
                auto [cy, cx] = stack.back();
                stack.pop_back();
                current.emplace_back(cy, cx);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy, nx = cx + dx;
                        if (ny < 0 || nx < 0 || ny >= in.height || nx >= in.width) continue;
                        if (!in.at(ny, nx) || seen.at(ny, nx)) continue;
                        seen.at(ny, nx) = 1;
                        stack.emplace_back(ny, nx);
                    }
                }
            }
            if (current.size() > best_size) {
                best_size = current.size();
                std::fill(best.v.begin(), best.v.end(), 0);
                for (auto [cy, cx] : current) best.at(cy, cx) = 1;
            }
        }
    }
    return best;
}

}  // namespace

Mask make_fov(const Tensor& image) {
    if (image.batch() != 1 || image.channels() != 3)
        throw std::invalid_argument("make_fov: expects a (1,3,H,W) image");

    Mask bright(image.height(), image.width());
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            const float lum =
                (image.at(0, 0, y, x) + image.at(0, 1, y, x) + image.at(0, 2, y, x)) / 3.0f;
            bright.at(y, x) = lum > 0.06f ? 1 : 0;
        }
    }

    Mask component = largest_component(bright);
    Mask closed = erode(dilate(component));

    const std::size_t total = closed.v.size();
    if (closed.count_ones() < total * 3 / 10) {
        Mask full(image.height(), image.width());
        std::fill(full.v.begin(), full.v.end(), 1);
        return full;
    }
    return closed;
}

}  // namespace lmbis
