#pragma once

#include <array>
#include <stdexcept>
#include <string>

namespace omnixfer {

enum class TaskKind { ID, Style, Effect, Camera, Motion };

enum class TaskCategory { Appearance, Temporal };

inline constexpr std::array<TaskKind, 5> kAllTaskKinds = {
    TaskKind::ID, TaskKind::Style, TaskKind::Effect, TaskKind::Camera, TaskKind::Motion};

inline TaskCategory category_of(TaskKind kind) {
    switch (kind) {
        case TaskKind::ID:
        case TaskKind::Style:
            return TaskCategory::Appearance;
        default:
            return TaskCategory::Temporal;
    }
}

/// Mask-channel flag: -1 for temporal tasks, -2 for ID, -3 for style.
inline double mask_flag_of(TaskKind kind) {
    switch (kind) {
        case TaskKind::ID:
            return -2.0;
        case TaskKind::Style:
            return -3.0;
        default:
            return -1.0;
    }
}

inline const char* task_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::ID:
            return "id";
        case TaskKind::Style:
            return "style";
        case TaskKind::Effect:
            return "effect";
        case TaskKind::Camera:
            return "camera";
        case TaskKind::Motion:
            return "motion";
    }
    return "?";
}

inline TaskKind task_from_name(const std::string& name) {
    for (TaskKind k : kAllTaskKinds) {
        if (name == task_name(k)) return k;
    }
    throw std::invalid_argument("unknown task kind '" + name +
                                "' (expected id|style|effect|camera|motion)");
}

struct TaskSpec {
    TaskKind kind = TaskKind::Motion;
    TaskCategory category = TaskCategory::Temporal;
    double mask_flag = -1.0;
    std::string query_bank;

    bool is_appearance() const { return category == TaskCategory::Appearance; }
};

inline TaskSpec task_spec(TaskKind kind) {
    TaskSpec spec;
    spec.kind = kind;
    spec.category = category_of(kind);
    spec.mask_flag = mask_flag_of(kind);
    spec.query_bank = task_name(kind);
    return spec;
}

}  // namespace omnixfer
