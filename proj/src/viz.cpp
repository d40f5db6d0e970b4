#include "lgmoe/viz.hpp"

#include <fstream>

namespace lgmoe {

namespace {

RoutingTable first_layer_table(Model& model, const Utterance& utt, int k) {
  Tape tape;
  ForwardCtx ctx(tape, model, /*train=*/false);
  ctx.k = k;
  EncoderOutput enc = encoder_forward_full(ctx, utt.feats);
  return enc.tables.front();
}

char lang_char(int lang) {
  if (lang == 0) return 'Z';
  if (lang == 1) return 'E';
  return static_cast<char>('0' + (lang % 10));
}

struct Rgb {
  unsigned char r, g, b;
};

Rgb lang_color(int lang) {
  switch (lang) {
    case 0: return {200, 40, 40};   // Zh: red
    case 1: return {40, 170, 60};   // En: green
    case 2: return {60, 90, 200};
    case 3: return {220, 160, 40};
    default: return {128, 128, 128};
  }
}

}  // namespace

std::string route_ascii(Model& model, const Utterance& utt, int k) {
  RoutingTable table = first_layer_table(model, utt, k);
  std::string out = "router: ";
  for (int lang : table.lang_ids) out += lang_char(lang);
  out += "\ntruth:  ";
  for (int lang : utt.true_frame_lang) out += lang_char(lang);
  out += "\n";
  return out;
}

void route_viz(Model& model, const Utterance& utt, int k, const std::string& out_path) {
  RoutingTable table = first_layer_table(model, utt, k);
  const int frames = table.frames();
  const int px_per_frame = 4, strip_h = 10, sep_h = 2;
  const int width = frames * px_per_frame;
  const int height = 2 * strip_h + sep_h;

  std::ofstream out(out_path, std::ios::binary);
  LGMOE_CHECK(out.good(), "route_viz: cannot write " << out_path);
  out << "P6\n" << width << " " << height << "\n255\n";
  auto put_row = [&](const std::vector<int>& langs, bool separator) {
    for (int x = 0; x < width; ++x) {
      Rgb c{255, 255, 255};
      if (!separator) c = lang_color(langs[static_cast<size_t>(x / px_per_frame)]);
      out.put(static_cast<char>(c.r));
      out.put(static_cast<char>(c.g));
      out.put(static_cast<char>(c.b));
    }
  };
  for (int y = 0; y < strip_h; ++y) put_row(table.lang_ids, false);
  for (int y = 0; y < sep_h; ++y) put_row({}, true);
  for (int y = 0; y < strip_h; ++y) put_row(utt.true_frame_lang, false);
  LGMOE_CHECK(out.good(), "route_viz: write failed for " << out_path);
  out.close();

  std::ofstream txt(out_path + ".txt");
  LGMOE_CHECK(txt.good(), "route_viz: cannot write " << out_path << ".txt");
  txt << route_ascii(model, utt, k);
}

}  // namespace lgmoe
