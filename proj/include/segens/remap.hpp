#pragma once

#include <map>
#include <vector>

#include "segens/types.hpp"

namespace segens {

struct ClassMappingEntry {
    std::uint16_t source_id;
    std::uint16_t target_id;  // 0 = VOID
    bool target_has_instances = false;
};

struct ClassMapping {
    std::map<std::uint16_t, ClassMappingEntry> by_source;

    void add(const ClassMappingEntry& e) { by_source[e.source_id] = e; }

    // Unmapped source ids fall through to VOID.
    std::uint16_t target_of(std::uint16_t source) const {
        auto it = by_source.find(source);
        return it == by_source.end() ? kVoidClass : it->second.target_id;
    }
    bool target_instances(std::uint16_t source) const {
        auto it = by_source.find(source);
        return it != by_source.end() && it->second.target_has_instances;
    }
};

inline SemanticLabelMap remap_semantic(const SemanticLabelMap& map,
                                       const ClassMapping& mapping) {
    SemanticLabelMap out(map.height, map.width);
    for (std::size_t i = 0; i < map.pixels(); ++i)
        out.ids[i] = map.ids[i] == kVoidClass ? kVoidClass : mapping.target_of(map.ids[i]);
    return out;
}

// Class-remaps segment ids. Targets without instance annotation collapse
// instance ids to 0; targets requiring instances keep one distinct id per
// source segment (fresh ids in first-encounter order when the source had
// none). VOID-mapped classes remove their segments.
inline PanopticLabelMap remap_panoptic(const PanopticLabelMap& map,
                                       const ClassMapping& mapping) {
    PanopticLabelMap out(map.height, map.width);
    std::map<std::uint32_t, std::uint32_t> seg_cache;
    std::map<std::uint16_t, std::uint16_t> next_instance;  // per target class
    for (std::size_t i = 0; i < map.pixels(); ++i) {
        std::uint32_t src = map.ids[i];
        if (src == kVoidSegment) continue;
        auto it = seg_cache.find(src);
        if (it == seg_cache.end()) {
            std::uint16_t src_cls = segment_class(src);
            std::uint16_t tgt_cls = mapping.target_of(src_cls);
            std::uint32_t enc = kVoidSegment;
            if (tgt_cls != kVoidClass) {
                if (!mapping.target_instances(src_cls)) {
                    enc = encode_segment(tgt_cls, 0);
                } else {
                    // Fresh id per source segment in first-encounter order;
                    // avoids collisions when several source classes (or a
                    // stuff source with no ids) land on one instance class.
                    enc = encode_segment(tgt_cls, ++next_instance[tgt_cls]);
                }
            }
            it = seg_cache.emplace(src, enc).first;
        }
        out.ids[i] = it->second;
    }
    return out;
}

}  // namespace segens
