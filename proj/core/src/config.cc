#include "cstt/config.h"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>

namespace cstt::config {

Tree LoadFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  Tree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::runtime_error(path + ": " + e.message() + " (line " +
                             std::to_string(e.line()) + ")");
  }
  return tree;
}

Tree Parse(const std::string& text) {
  std::istringstream in(text);
  Tree tree;
  boost::property_tree::read_ini(in, tree);
  return tree;
}

std::string Serialize(const Tree& tree) {
  std::ostringstream out;
  boost::property_tree::write_ini(out, tree);
  return out.str();
}

void SaveFile(const Tree& tree, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file " + path);
  boost::property_tree::write_ini(out, tree);
}

void Merge(Tree& base, const Tree& overrides) {
  std::function<void(const Tree&, const std::string&)> walk =
      [&](const Tree& node, const std::string& prefix) {
        for (const auto& [key, child] : node) {
          const std::string path = prefix.empty() ? key : prefix + "." + key;
          if (child.empty()) {
            base.put(path, child.data());
          } else {
            walk(child, path);
          }
        }
      };
  walk(overrides, "");
}

}  // namespace cstt::config
