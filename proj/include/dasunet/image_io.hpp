#pragma once

// PNG / JPEG decoding to [0,1] RGB and 8-bit PNG encoding. Requires linking
// libpng and libjpeg.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cfenv>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <jpeglib.h>

#include "dasunet/tensor.hpp"

namespace dasunet::io {

class ImageError : public Error {
public:
    using Error::Error;
};

inline std::string lower_extension(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return ext;
}

inline bool is_image_file(const std::filesystem::path& p) {
    const std::string ext = lower_extension(p);
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

/// Interleaved 8-bit RGB to a (1,3,h,w) tensor in [0,1].
template <class T>
Tensor<T> from_rgb8(const std::vector<unsigned char>& px, int h, int w) {
    Tensor<T> out(1, 3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out(0, c, y, x) = static_cast<T>(px[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / T(255);
    return out;
}

/// Clamp to [0,1], scale to 255 and round half to even.
template <class T>
std::vector<unsigned char> to_rgb8(const Tensor<T>& img) {
    if (img.n() != 1 || (img.c() != 3 && img.c() != 1)) {
        throw ShapeError("image export expects (1,3,h,w) or (1,1,h,w), got " + img.shape().str());
    }
    const int h = img.h();
    const int w = img.w();
    std::vector<unsigned char> px(static_cast<std::size_t>(h) * w * 3);
    const int saved = std::fegetround();
    std::fesetround(FE_TONEAREST);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(img(0, img.c() == 3 ? c : 0, y, x)), 0.0, 1.0);
                px[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<unsigned char>(std::nearbyint(v * 255.0));
            }
    std::fesetround(saved);
    return px;
}

inline Tensor<double> read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw ImageError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> px(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
        png_image_free(&image);
        throw ImageError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    return from_rgb8<double>(px, static_cast<int>(image.height), static_cast<int>(image.width));
}

namespace detail {
struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}
} // namespace detail

inline Tensor<double> read_jpeg(const std::filesystem::path& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.string().c_str(), "rb"), &std::fclose);
    if (!file) throw ImageError("cannot open " + path.string());
    jpeg_decompress_struct cinfo{};
    detail::JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = detail::jpeg_error_exit;
    std::vector<unsigned char> px;
    int h = 0;
    int w = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw ImageError("cannot decode JPEG " + path.string() + ": " + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    h = static_cast<int>(cinfo.output_height);
    w = static_cast<int>(cinfo.output_width);
    px.resize(static_cast<std::size_t>(h) * w * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = px.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return from_rgb8<double>(px, h, w);
}

/// Decodes PNG or JPEG (by extension) to a (1,3,h,w) tensor in [0,1].
inline Tensor<double> read_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ImageError("no such image: " + path.string());
    const std::string ext = lower_extension(path);
    if (ext == ".png") return read_png(path);
    if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
    throw ImageError("unsupported image format: " + path.string());
}

template <class T>
void write_png(const std::filesystem::path& path, const Tensor<T>& img) {
    const std::vector<unsigned char> px = to_rgb8(img);
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.w());
    image.height = static_cast<png_uint_32>(img.h());
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, px.data(), 0, nullptr)) {
        throw ImageError("cannot write PNG " + path.string() + ": " + image.message);
    }
}

} // namespace dasunet::io
