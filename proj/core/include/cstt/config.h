#ifndef CSTT_CONFIG_H_
#define CSTT_CONFIG_H_

// Human-readable key-value configuration. Files are INI: `[section]` headers
// and `key = value` lines; a key `mode` under `[xmodal]` is addressed as
// "xmodal.mode".

#include <string>

#include <boost/property_tree/ptree.hpp>

namespace cstt::config {

using Tree = boost::property_tree::ptree;

Tree LoadFile(const std::string& path);
Tree Parse(const std::string& text);
std::string Serialize(const Tree& tree);
void SaveFile(const Tree& tree, const std::string& path);

// Copies every leaf of `overrides` into `base`, replacing existing values.
void Merge(Tree& base, const Tree& overrides);

}  // namespace cstt::config

#endif  // CSTT_CONFIG_H_
