#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "moba/action.hpp"

namespace moba {

struct NodeId {
  std::int64_t value = -1;
  auto operator<=>(const NodeId&) const = default;
};

inline std::string to_string(NodeId id) { return std::to_string(id.value); }

enum class TaskStatus { Pending, InProgress, Success, Failure };
enum class NodeKind { Task, Action };

std::string_view to_string(TaskStatus s);

/// Payload carried by a task node once it has executed a command.
struct ActionRecord {
  Action action;
  std::string observation;
  std::string thought;
  std::optional<std::string> response;
  std::optional<std::string> reflection;
  bool success = false;
  int step_index = 0;  // per-episode execution order, assigned on append
  int env_step = 0;    // device step that applied it; 0 when never applied
  std::string screen_key;
  std::string error;
};

struct TaskNode {
  NodeId id;
  std::string goal;
  std::optional<NodeId> parent;
  std::vector<NodeId> children;
  TaskStatus status = TaskStatus::Pending;
  NodeKind kind = NodeKind::Task;
  int episode = 0;
  int depth = 0;
  std::optional<ActionRecord> action;
  std::optional<std::string> plan_reflection;
};

struct Route {
  NodeId for_node;
  std::vector<NodeId> actions;
  bool operator==(const Route&) const = default;
};

struct MemoryKey {
  std::vector<double> values;
  bool operator==(const MemoryKey&) const = default;
};

enum class MemoryErrc {
  UnknownNode,
  DuplicateId,
  UnknownCorpus,
  DimensionMismatch,
  RootNotComplete,
  FileFormat,
  NoAppsKnown,
  EmbedBackendUnavailable,
};

class MemoryError : public std::runtime_error {
 public:
  MemoryError(MemoryErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  MemoryErrc code() const noexcept { return code_; }

 private:
  MemoryErrc code_;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual MemoryKey embed(std::string_view text) const = 0;
  virtual std::size_t dimension() const = 0;
};

/// Hashes lower-cased character trigrams into a fixed number of buckets and
/// L2-normalises. The empty string maps to the normalised all-ones vector.
class TrigramEmbedder final : public Embedder {
 public:
  explicit TrigramEmbedder(std::size_t dimension = 256) : dim_(dimension) {}
  MemoryKey embed(std::string_view text) const override;
  std::size_t dimension() const override { return dim_; }

 private:
  std::size_t dim_;
};

std::shared_ptr<const Embedder> default_embedder();

double cosine(const MemoryKey& a, const MemoryKey& b);

enum class Corpus { TaskHistory, RouteHistory, App, Page, User };

std::string_view to_string(Corpus c);
std::optional<Corpus> corpus_from_name(std::string_view name);

struct MemoryEntry {
  Corpus corpus = Corpus::TaskHistory;
  std::string key_text;  // what was embedded
  std::string content;   // snippet handed to the backend
  MemoryKey key;
  std::optional<NodeId> origin;
  std::string tag;        // owning app id for app entries
  std::uint64_t seq = 0;  // insertion order
};

struct Retrieved {
  MemoryEntry entry;
  double score = 0.0;
};

struct RelationalContext {
  std::optional<std::string> parent_goal;
  std::optional<TaskNode> last_success;
  std::optional<TaskNode> last_failure_with_reflection;
};

struct RetrievalWeights {
  double relation = 1.0;
  double content = 1.0;
};

struct AppMemoryEntry {
  std::string app_id;
  std::string description;
  std::map<std::string, std::string> page_notes;
};

struct PageMemoryEntry {
  std::string screen_key;
  std::vector<std::string> notes;
};

struct ActionMemoryItem {
  Action action;
  std::string subgoal;
  std::map<std::string, std::string> extracted_info;
};

struct UserMemoryEntry {
  std::string text;
  std::int64_t timestamp = 0;
};

class MemoryStore {
 public:
  static constexpr int kSchemaVersion = 1;

  explicit MemoryStore(std::shared_ptr<const Embedder> embedder = default_embedder());

  const Embedder& embedder() const { return *embedder_; }
  MemoryKey embed(std::string_view text) const;

  // -- task memory ----------------------------------------------------------

  /// Starts a new episode tree and clears Action Memory.
  int begin_episode();
  int current_episode() const { return episode_; }

  NodeId insert_task_node(std::string goal, std::optional<NodeId> parent,
                          std::optional<NodeId> explicit_id = std::nullopt);
  void mark_status(NodeId id, TaskStatus status);
  /// Turns the node into an action node; assigns ActionRecord::step_index.
  void append_action(NodeId id, ActionRecord record);
  /// Finalises the action outcome; successes are indexed into the task history.
  void set_action_success(NodeId id, bool success);
  /// Attaches a failure reflection to the node's action and indexes it.
  void append_reflection(NodeId id, std::string reflection);
  void set_plan_reflection(NodeId id, std::string reflection);

  const TaskNode& node(NodeId id) const;
  bool contains(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }
  std::vector<NodeId> episode_nodes(int episode) const;
  /// Action nodes of an episode in execution order.
  std::vector<NodeId> execution_order(int episode) const;
  /// Undirected path length, or nullopt when the nodes live in different trees.
  std::optional<int> tree_distance(NodeId a, NodeId b) const;

  RelationalContext retrieve_relational(NodeId id) const;
  std::map<NodeId, Route> finalize_route(NodeId root);

  // -- app / page / action / user memory ------------------------------------

  void upsert_app_entry(AppMemoryEntry entry);
  const std::vector<AppMemoryEntry>& apps() const { return apps_; }
  void append_page_note(const std::string& screen_key, std::string note);
  const PageMemoryEntry* page(const std::string& screen_key) const;
  void append_action_memory(ActionMemoryItem item);
  const std::vector<ActionMemoryItem>& action_memory() const { return action_memory_; }
  void clear_action_memory() { action_memory_.clear(); }
  void append_user_memory(UserMemoryEntry entry);

  // -- retrieval --------------------------------------------------------------

  const MemoryEntry& add_entry(Corpus corpus, std::string key_text, std::string content,
                               std::optional<NodeId> origin = std::nullopt);
  const std::vector<MemoryEntry>& entries() const { return entries_; }

  std::vector<Retrieved> retrieve_content(std::string_view query, std::string_view corpus, std::size_t k) const;
  std::vector<Retrieved> retrieve_content(std::string_view query, Corpus corpus, std::size_t k) const;
  std::vector<Retrieved> retrieve_weighted(std::string_view query, NodeId node, RetrievalWeights weights,
                                           std::size_t k, std::span<const Corpus> corpora) const;

  // -- persistence ------------------------------------------------------------

  /// Loads pre-embedded entries; an empty file leaves the store unchanged.
  void warm_start(const std::filesystem::path& file);
  void warm_start(const nlohmann::json& doc);
  nlohmann::ordered_json to_json() const;
  void save(const std::filesystem::path& file) const;

 private:
  TaskNode& mut_node(NodeId id);
  void check_key(const MemoryKey& key) const;

  std::shared_ptr<const Embedder> embedder_;
  std::map<NodeId, TaskNode> nodes_;
  std::int64_t next_id_ = 1;
  int episode_ = 0;
  std::map<int, int> action_counter_;
  std::vector<MemoryEntry> entries_;
  std::uint64_t next_seq_ = 0;
  std::vector<AppMemoryEntry> apps_;
  std::vector<PageMemoryEntry> pages_;
  std::vector<ActionMemoryItem> action_memory_;
  std::vector<UserMemoryEntry> users_;
};

/// Renders relational context as backend snippets.
std::vector<std::string> relational_snippets(const RelationalContext& ctx);

}  // namespace moba
