import pytest
import torch

torch.set_num_threads(1)

from dialdistill.corpus import DatabaseEntry, DomainGoal, Episode, Ontology, Turn

TOY_ONTOLOGY = {
    "restaurant": {
        "informable": {
            "food": ["chinese", "italian", "indian", "british"],
            "area": ["north", "south", "centre"],
        },
        "requestable": ["address", "phone"],
    },
    "hotel": {
        "informable": {"stars": ["two", "three", "four"]},
        "requestable": ["phone"],
    },
    "taxi": {
        "informable": {"destination": ["airport", "museum"]},
        "requestable": ["phone"],
    },
}

_FOODS = ["italian", "italian", "italian", "chinese", "chinese", "indian", "indian", "british", "british", "british"]


@pytest.fixture
def toy_ontology():
    return Ontology.from_dict(TOY_ONTOLOGY)


def build_toy_database():
    entries = [
        DatabaseEntry(
            domain="restaurant",
            entity_id=f"restaurant_{i:02d}",
            attributes={
                "name": f"golden palace {i}" if i else "golden palace",
                "food": _FOODS[i],
                "area": ["north", "south", "centre"][i % 3],
                "address": f"{i + 1} mill road",
                "phone": "01223 323737" if i == 0 else f"01223 1000{i:02d}",
            },
        )
        for i in range(10)
    ]
    entries.append(
        DatabaseEntry(
            domain="hotel",
            entity_id="hotel_00",
            attributes={"name": "royal lodge", "stars": "three", "phone": "02223 100000"},
        )
    )
    entries.append(
        DatabaseEntry(
            domain="taxi",
            entity_id="taxi_00",
            attributes={"name": "speedy cars", "destination": "airport", "phone": "03223 100000"},
        )
    )
    return entries


@pytest.fixture
def toy_database():
    return build_toy_database()


def make_turn(user, response, domain=None, belief=None, db_count=0):
    return Turn(
        user_tokens=user.split(),
        response_tokens=response.split(),
        domain=domain,
        belief=dict(belief or {}),
        db_count=db_count,
    )


def make_episode(eid, turns, goal=None):
    return Episode(episode_id=eid, goal=dict(goal or {}), turns=turns)


@pytest.fixture
def simple_episode():
    return make_episode(
        "ep0",
        [
            make_turn(
                "i want italian food in the north",
                "the phone of golden palace is 01223 323737",
                domain="restaurant",
                belief={("restaurant", "food"): "italian", ("restaurant", "area"): "north"},
                db_count=1,
            )
        ],
        goal={"restaurant": DomainGoal(constraints={"food": "italian", "area": "north"}, requests=["phone"])},
    )


def gradcheck(loss_fn, named_params, rel_tol=1e-3, eps=1e-5, max_coords=32):
    """Compare autograd gradients of loss_fn() against central differences.

    Checks every coordinate of small tensors and an evenly spaced sample of
    larger ones; all parameters must be float64.
    """
    params = [p for _, p in named_params]
    for p in params:
        p.grad = None
    loss_fn().backward()
    failures = []
    for name, param in named_params:
        assert param.dtype == torch.float64, "gradcheck needs float64 parameters"
        grad = param.grad
        if grad is None:
            continue
        flat = param.detach().reshape(-1)
        grad_flat = grad.reshape(-1)
        n = flat.numel()
        if n <= max_coords:
            indices = range(n)
        else:
            step = (n - 1) / (max_coords - 1)
            indices = sorted({int(round(i * step)) for i in range(max_coords)})
        for i in indices:
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + eps
            plus = float(loss_fn().detach())
            with torch.no_grad():
                flat[i] = original - eps
            minus = float(loss_fn().detach())
            with torch.no_grad():
                flat[i] = original
            fd = (plus - minus) / (2 * eps)
            an = grad_flat[i].item()
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
            if rel > rel_tol:
                failures.append((name, i, an, fd, rel))
    assert not failures, f"gradient mismatches: {failures[:5]}"
