#include "lmbis/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include <jpeglib.h>
#include <png.h>
#include <tiffio.h>

namespace lmbis {

std::size_t Mask::count_ones() const {
    std::size_t n = 0;
    for (std::uint8_t b : v) n += b;
    return n;
}

namespace {

std::string lower_ext(const std::filesystem::path& path) {
    std::string e = path.extension().string();
    std::transform(e.begin(), e.end(), e.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.string().c_str(), mode));
    if (!f) throw IoError("cannot open " + path.string());
    return f;
}

// --- PNG ---------------------------------------------------------------

ImageU8 decode_png(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: failed to decode " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_packing(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
        png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    ImageU8 img;
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = static_cast<int>(png_get_channels(png, info));
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png: unsupported channel count in " + path.string());
    }
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);

    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void encode_png(const std::filesystem::path& path, const ImageU8& img) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: failed to write " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, img.width, img.height, 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(
                               img.pixels.data() +
                               static_cast<std::size_t>(y) * img.width * img.channels));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// --- JPEG --------------------------------------------------------------

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

ImageU8 decode_jpeg(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    jpeg_decompress_struct cinfo{};
    JpegErrorMgr err{};
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw IoError("jpeg: failed to decode " + path.string());
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, f.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);

    ImageU8 img;
    img.width = static_cast<int>(cinfo.output_width);
    img.height = static_cast<int>(cinfo.output_height);
    img.channels = static_cast<int>(cinfo.output_components);
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.pixels.data() +
                       static_cast<std::size_t>(cinfo.output_scanline) * img.width * img.channels;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

void encode_jpeg(const std::filesystem::path& path, const ImageU8& img, int quality) {
    FilePtr f = open_file(path, "wb");
    jpeg_compress_struct cinfo{};
    JpegErrorMgr err{};
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        throw IoError("jpeg: failed to write " + path.string());
    }
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, f.get());
    cinfo.image_width = static_cast<JDIMENSION>(img.width);
    cinfo.image_height = static_cast<JDIMENSION>(img.height);
    cinfo.input_components = img.channels;
    cinfo.in_color_space = img.channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    // Full-resolution chroma keeps flat-color fixtures lossless in practice.
    for (int i = 0; i < cinfo.num_components; ++i) {
        cinfo.comp_info[i].h_samp_factor = 1;
        cinfo.comp_info[i].v_samp_factor = 1;
    }
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row =
            const_cast<JSAMPROW>(img.pixels.data() +
                                 static_cast<std::size_t>(cinfo.next_scanline) * img.width *
                                     img.channels);
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
}

// --- TIFF --------------------------------------------------------------

ImageU8 decode_tiff(const std::filesystem::path& path) {
    TIFFSetWarningHandler(nullptr);
    TIFF* tif = TIFFOpen(path.string().c_str(), "r");
    if (!tif) throw IoError("tiff: cannot open " + path.string());

    std::uint32_t w = 0, h = 0;
    TIFFGetField(tif, TIFFTAG_IMAGEWIDTH, &w);
    TIFFGetField(tif, TIFFTAG_IMAGELENGTH, &h);
    std::vector<std::uint32_t> raster(static_cast<std::size_t>(w) * h);
    if (!TIFFReadRGBAImageOriented(tif, w, h, raster.data(), ORIENTATION_TOPLEFT, 0)) {
        TIFFClose(tif);
        throw IoError("tiff: failed to decode " + path.string());
    }
    TIFFClose(tif);

    ImageU8 img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.channels = 3;
    img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < raster.size(); ++i) {
        img.pixels[3 * i + 0] = static_cast<std::uint8_t>(TIFFGetR(raster[i]));
        img.pixels[3 * i + 1] = static_cast<std::uint8_t>(TIFFGetG(raster[i]));
        img.pixels[3 * i + 2] = static_cast<std::uint8_t>(TIFFGetB(raster[i]));
    }
    return img;
}

void encode_tiff(const std::filesystem::path& path, const ImageU8& img) {
    TIFF* tif = TIFFOpen(path.string().c_str(), "w");
    if (!tif) throw IoError("tiff: cannot open for writing " + path.string());
    TIFFSetField(tif, TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(img.width));
    TIFFSetField(tif, TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(img.height));
    TIFFSetField(tif, TIFFTAG_SAMPLESPERPIXEL, img.channels);
    TIFFSetField(tif, TIFFTAG_BITSPERSAMPLE, 8);
    TIFFSetField(tif, TIFFTAG_ORIENTATION, ORIENTATION_TOPLEFT);
    TIFFSetField(tif, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(tif, TIFFTAG_PHOTOMETRIC,
                 img.channels == 1 ? PHOTOMETRIC_MINISBLACK : PHOTOMETRIC_RGB);
    TIFFSetField(tif, TIFFTAG_COMPRESSION, COMPRESSION_NONE);
    for (int y = 0; y < img.height; ++y) {
        if (TIFFWriteScanline(
                tif,
                const_cast<std::uint8_t*>(img.pixels.data() +
                                          static_cast<std::size_t>(y) * img.width *
                                              img.channels),
                static_cast<std::uint32_t>(y)) < 0) {
            TIFFClose(tif);
            throw IoError("tiff: write failed for " + path.string());
        }
    }
    TIFFClose(tif);
}

// --- PPM / PGM ---------------------------------------------------------

int ppm_token(std::istream& in) {
    // skips whitespace and '#' comments
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v = -1;
    in >> v;
    return v;
}

ImageU8 decode_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char p = 0, kind = 0;
    in.get(p).get(kind);
    if (p != 'P' || (kind != '5' && kind != '6'))
        throw IoError("ppm: unsupported format in " + path.string());

    ImageU8 img;
    img.channels = kind == '6' ? 3 : 1;
    img.width = ppm_token(in);
    img.height = ppm_token(in);
    const int maxval = ppm_token(in);
    if (img.width <= 0 || img.height <= 0 || maxval != 255)
        throw IoError("ppm: bad header in " + path.string());
    in.get();  // single whitespace before the raster

    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size())
        throw IoError("ppm: truncated raster in " + path.string());
    return img;
}

void encode_ppm(const std::filesystem::path& path, const ImageU8& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing " + path.string());
    out << (img.channels == 3 ? "P6" : "P5") << "\n"
        << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("ppm: write failed for " + path.string());
}

}  // namespace

ImageU8 decode_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw IoError("no such file: " + path.string());
    const std::string ext = lower_ext(path);
    ImageU8 img;
    if (ext == ".png") img = decode_png(path);
    else if (ext == ".jpg" || ext == ".jpeg") img = decode_jpeg(path);
    else if (ext == ".tif" || ext == ".tiff") img = decode_tiff(path);
    else if (ext == ".ppm" || ext == ".pgm") img = decode_ppm(path);
    else throw IoError("unsupported image extension: " + path.string());
    if (img.width <= 0 || img.height <= 0)
        throw IoError("decoded empty image: " + path.string());
    return img;
}

void write_png(const std::filesystem::path& path, const ImageU8& image) {
    encode_png(path, image);
}
void write_ppm(const std::filesystem::path& path, const ImageU8& image) {
    encode_ppm(path, image);
}
void write_jpeg(const std::filesystem::path& path, const ImageU8& image, int quality) {
    encode_jpeg(path, image, quality);
}
void write_tiff(const std::filesystem::path& path, const ImageU8& image) {
    encode_tiff(path, image);
}

void write_image(const std::filesystem::path& path, const ImageU8& image) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") write_png(path, image);
    else if (ext == ".jpg" || ext == ".jpeg") write_jpeg(path, image);
    else if (ext == ".tif" || ext == ".tiff") write_tiff(path, image);
    else if (ext == ".ppm" || ext == ".pgm") write_ppm(path, image);
    else throw IoError("unsupported image extension: " + path.string());
}

Tensor image_to_tensor(const ImageU8& image) {
    Tensor t(1, 3, image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const int src_c = image.channels == 1 ? 0 : c;
                t.at(0, c, y, x) = image.at(y, x, src_c) / 255.0f;
            }
        }
    }
    return t;
}

ImageU8 tensor_channel_to_gray(const Tensor& t, int channel) {
    if (channel < 0 || channel >= t.channels())
        throw std::invalid_argument("tensor_channel_to_gray: channel out of range");
    ImageU8 img;
    img.width = t.width();
    img.height = t.height();
    img.channels = 1;
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const float v = std::clamp(t.at(0, channel, y, x), 0.0f, 1.0f);
            img.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(255.0f * v));
        }
    }
    return img;
}

Mask mask_from_image(const ImageU8& image, int threshold) {
    Mask m(image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            int sum = 0;
            for (int c = 0; c < image.channels; ++c) sum += image.at(y, x, c);
            m.at(y, x) = (sum / image.channels) >= threshold ? 1 : 0;
        }
    }
    return m;
}

ImageU8 mask_to_image(const Mask& mask) {
    ImageU8 img;
    img.width = mask.width;
    img.height = mask.height;
    img.channels = 1;
    img.pixels.resize(mask.v.size());
    for (std::size_t i = 0; i < mask.v.size(); ++i)
        img.pixels[i] = mask.v[i] ? 255 : 0;
    return img;
}

}  // namespace lmbis
