"""Vision-to-text surrogate: renders the world scene as natural language.

Canonical mode produces one fixed template per (road, weather) cell with the
traffic level spliced in. Variability mode deterministically picks one of
three paraphrase fragments from the seed; every variant keeps the road,
weather, and traffic markers recoverable, so downstream reasoning stays
stable while the wording shifts.
"""

from __future__ import annotations

from dataclasses import dataclass

from driveassist.simulator import RoadType, Traffic, Weather, WorldScene

SceneTags = tuple[RoadType, Weather, Traffic]


@dataclass(frozen=True, slots=True)
class SceneDescription:
    text: str
    tags: SceneTags
    variant_id: int

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("description text must be non-empty")
        if self.variant_id < 0:
            raise ValueError("variant_id must be >= 0")


_CANONICAL = {
    (RoadType.DOWNTOWN, Weather.CLEAR): "urban road, {traffic} traffic",
    (RoadType.DOWNTOWN, Weather.RAINY): "urban road, wet surface, {traffic} traffic",
    (RoadType.DOWNTOWN, Weather.FOGGY): "urban road, low visibility fog, {traffic} traffic",
    (RoadType.HIGHWAY, Weather.CLEAR): "highway road, clear visibility, {traffic} traffic",
    (RoadType.HIGHWAY, Weather.RAINY): "highway road, wet surface, {traffic} traffic",
    (RoadType.HIGHWAY, Weather.FOGGY): "highway road, dense fog, {traffic} traffic",
}

_ROAD_WORD = {RoadType.DOWNTOWN: "urban", RoadType.HIGHWAY: "highway"}
_WEATHER_CLAUSE = {Weather.CLEAR: "", Weather.RAINY: ", wet surface", Weather.FOGGY: ", dense fog"}


def _paraphrases(scene: WorldScene) -> tuple[str, str, str]:
    road = _ROAD_WORD[scene.road_type]
    clause = _WEATHER_CLAUSE[scene.weather]
    traffic = scene.traffic.value
    article = "an" if road == "urban" else "a"
    return (
        f"{road} road ahead{clause}, {traffic} traffic",
        f"{road} road{clause} with {traffic} traffic",
        f"view of {article} {road} road, {traffic} traffic{clause}",
    )


def describe_scene(scene: WorldScene, variability: bool = False, seed: int = 0) -> SceneDescription:
    """Describe the scene; canonical when variability is off, seeded paraphrase otherwise."""
    tags: SceneTags = (scene.road_type, scene.weather, scene.traffic)
    if not variability:
        text = _CANONICAL[(scene.road_type, scene.weather)].format(traffic=scene.traffic.value)
        return SceneDescription(text=text, tags=tags, variant_id=0)
    variants = _paraphrases(scene)
    index = seed % len(variants)
    return SceneDescription(text=variants[index], tags=tags, variant_id=index + 1)


def recover_tags(text: str) -> SceneTags:
    """Recover (road, weather, traffic) from any description variant.

    Raises ValueError if a marker is missing; every template emitted by
    describe_scene carries all three.
    """
    low = text.lower()
    if "urban" in low:
        road = RoadType.DOWNTOWN
    elif "highway" in low:
        road = RoadType.HIGHWAY
    else:
        raise ValueError(f"no road marker in {text!r}")
    if "wet" in low or "rain" in low:
        weather = Weather.RAINY
    elif "fog" in low:
        weather = Weather.FOGGY
    else:
        weather = Weather.CLEAR
    for traffic in Traffic:
        if traffic.value in low:
            return (road, weather, traffic)
    raise ValueError(f"no traffic marker in {text!r}")
