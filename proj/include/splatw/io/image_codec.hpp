#pragma once

/// @file image_codec.hpp
/// @brief 8-bit sRGB PNG/JPEG encoding of linear images (libpng, libjpeg).

#include "splatw/image.hpp"
#include "splatw/io/tensor_file.hpp"

#include <jpeglib.h>
#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace splatw::io {

/// 8-bit interleaved RGB (or gray) pixels.
struct Pixels8 {
    int width = 0, height = 0, channels = 3;
    std::vector<std::uint8_t> data;
};

template <typename T>
Pixels8 to_srgb8(const Image<T>& img) {
    Pixels8 p{img.width, img.height, img.channels, std::vector<std::uint8_t>(img.data.size())};
    for (std::size_t i = 0; i < img.data.size(); ++i) p.data[i] = linear_to_srgb8(double(img.data[i]));
    return p;
}

template <typename T>
Image<T> from_srgb8(const Pixels8& p) {
    Image<T> img(p.width, p.height, p.channels);
    const auto& table = srgb8_decode_table();
    for (std::size_t i = 0; i < p.data.size(); ++i) img.data[i] = static_cast<T>(table[p.data[i]]);
    return img;
}

inline std::vector<std::uint8_t> encode_png(const Pixels8& px) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(px.width);
    image.height = static_cast<png_uint_32>(px.height);
    image.format = px.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, px.data.data(), 0, nullptr)) {
        throw FormatError(std::string("png encode failed: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, px.data.data(), 0, nullptr)) {
        throw FormatError(std::string("png encode failed: ") + image.message);
    }
    out.resize(size);
    return out;
}

/// Decodes any PNG to 8-bit RGB.
inline Pixels8 decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw FormatError(std::string("png decode failed: ") + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    Pixels8 px;
    px.width = static_cast<int>(image.width);
    px.height = static_cast<int>(image.height);
    px.channels = 3;
    px.data.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, px.data.data(), 0, nullptr)) {
        png_image_free(&image);
        throw FormatError(std::string("png decode failed: ") + image.message);
    }
    return px;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("missing file " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw FormatError("write failed: " + path.string());
}

template <typename T>
void write_png(const std::filesystem::path& path, const Image<T>& linear) {
    write_file_bytes(path, encode_png(to_srgb8(linear)));
}

template <typename T>
Image<T> read_png(const std::filesystem::path& path) {
    return from_srgb8<T>(decode_png(read_file_bytes(path)));
}

/// Binary mask as a gray PNG (0 or 255).
inline void write_mask_png(const std::filesystem::path& path, const Image<std::uint8_t>& mask) {
    Pixels8 px{mask.width, mask.height, 1, std::vector<std::uint8_t>(mask.data.size())};
    for (std::size_t i = 0; i < mask.data.size(); ++i) px.data[i] = mask.data[i] ? 255 : 0;
    write_file_bytes(path, encode_png(px));
}

inline std::vector<std::uint8_t> encode_jpeg(const Pixels8& px, int quality = 90) {
    if (px.channels != 3) throw FormatError("jpeg encode: expected RGB");
    jpeg_compress_struct cinfo;
    jpeg_error_mgr jerr;
    cinfo.err = jpeg_std_error(&jerr);
    jerr.error_exit = [](j_common_ptr info) {
        char msg[JMSG_LENGTH_MAX];
        (*info->err->format_message)(info, msg);
        throw FormatError(std::string("jpeg encode failed: ") + msg);
    };
    jpeg_create_compress(&cinfo);
    unsigned char* buf = nullptr;
    unsigned long size = 0;
    std::vector<std::uint8_t> out;
    try {
        jpeg_mem_dest(&cinfo, &buf, &size);
        cinfo.image_width = static_cast<JDIMENSION>(px.width);
        cinfo.image_height = static_cast<JDIMENSION>(px.height);
        cinfo.input_components = 3;
        cinfo.in_color_space = JCS_RGB;
        jpeg_set_defaults(&cinfo);
        jpeg_set_quality(&cinfo, quality, TRUE);
        jpeg_start_compress(&cinfo, TRUE);
        while (cinfo.next_scanline < cinfo.image_height) {
            JSAMPROW row = const_cast<JSAMPROW>(px.data.data() + static_cast<std::size_t>(cinfo.next_scanline) * px.width * 3);
            jpeg_write_scanlines(&cinfo, &row, 1);
        }
        jpeg_finish_compress(&cinfo);
        out.assign(buf, buf + size);
    } catch (...) {
        jpeg_destroy_compress(&cinfo);
        std::free(buf);
        throw;
    }
    jpeg_destroy_compress(&cinfo);
    std::free(buf);
    return out;
}

}  // namespace splatw::io
