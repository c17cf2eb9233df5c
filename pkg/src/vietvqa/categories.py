"""Closed category vocabulary shared by the knowledge base and dataset manifests."""

from __future__ import annotations

CATEGORIES: tuple[str, ...] = (
    "Cuisine",
    "Architecture",
    "Traditional Clothing",
    "Cultural Festivals",
    "Daily Life Practices",
    "Traditional Sports",
    "Transportation",
    "Handicrafts",
    "Musical Instruments",
    "Folk Arts",
    "Landscapes",
    "Miscellaneous",
)

CATEGORY_SET = frozenset(CATEGORIES)

# Category families each identify_* function may resolve into. identify_object is unrestricted.
IDENTIFY_FAMILIES: dict[str, frozenset[str] | None] = {
    "identify_food": frozenset({"Cuisine"}),
    "identify_landmark": frozenset({"Architecture", "Landscapes"}),
    "identify_clothing": frozenset({"Traditional Clothing"}),
    "identify_object": None,
}
