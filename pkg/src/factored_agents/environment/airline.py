"""Tool effects for the mini-airline domain."""

from __future__ import annotations

from .core import BusinessRuleError, ToolExecutor

CABIN_FARE_MULTIPLIER = {"basic_economy": 0.8, "economy": 1.0, "business": 2.5}
FREE_BAGS = {"basic_economy": 0, "economy": 1, "business": 2}
BAG_FEE = 50
INSURANCE_FEE = 30


def _user(db, user_id):
    user = db["users"].get(user_id)
    if user is None:
        raise BusinessRuleError(f"user {user_id} not found")
    return user


def _reservation(db, reservation_id):
    rsv = db["reservations"].get(reservation_id)
    if rsv is None:
        raise BusinessRuleError(f"reservation {reservation_id} not found")
    return rsv


def _fare(flight, cabin, passengers):
    return round(flight["base_price"] * CABIN_FARE_MULTIPLIER[cabin] * passengers, 2)


def get_user_details(db, args):
    return _user(db, args["user_id"])


def get_reservation_details(db, args):
    return _reservation(db, args["reservation_id"])


def search_direct_flight(db, args):
    return [
        f
        for _, f in sorted(db["flights"].items())
        if f["origin"] == args["origin"] and f["destination"] == args["destination"] and f["date"] == args["date"]
    ]


def book_reservation(db, args):
    user = _user(db, args["user_id"])
    flight = db["flights"].get(args["flight_number"])
    if flight is None:
        raise BusinessRuleError(f"flight {args['flight_number']} not found")
    passengers = args["passengers"]
    if passengers < 1 or passengers > 5:
        raise BusinessRuleError("passengers must be between 1 and 5")
    if flight["seats_available"][args["cabin"]] < passengers:
        raise BusinessRuleError(f"not enough {args['cabin']} seats on {args['flight_number']}")
    total = _fare(flight, args["cabin"], passengers)
    if args.get("insurance"):
        total += INSURANCE_FEE * passengers
    if user["balance"] < total:
        raise BusinessRuleError("insufficient balance")
    flight["seats_available"][args["cabin"]] -= passengers
    user["balance"] = round(user["balance"] - total, 2)
    reservation_id = f"RSV{len(db['reservations']) + 1:03d}"
    db["reservations"][reservation_id] = {
        "reservation_id": reservation_id,
        "user_id": args["user_id"],
        "flight_number": args["flight_number"],
        "cabin": args["cabin"],
        "passengers": passengers,
        "insurance": bool(args.get("insurance", False)),
        "total_baggages": 0,
        "paid": total,
        "status": "booked",
    }
    user["reservations"].append(reservation_id)
    return {"reservation_id": reservation_id, "paid": total}


def cancel_reservation(db, args):
    rsv = _reservation(db, args["reservation_id"])
    if rsv["status"] == "cancelled":
        raise BusinessRuleError(f"reservation {args['reservation_id']} is already cancelled")
    if args["reason"] == "change of plan" and not rsv["insurance"] and rsv["cabin"] != "business":
        raise BusinessRuleError("change-of-plan cancellations need insurance or a business fare")
    rsv["status"] = "cancelled"
    rsv["cancel_reason"] = args["reason"]
    db["flights"][rsv["flight_number"]]["seats_available"][rsv["cabin"]] += rsv["passengers"]
    user = _user(db, rsv["user_id"])
    user["balance"] = round(user["balance"] + rsv["paid"], 2)
    return {"reservation_id": args["reservation_id"], "refund": rsv["paid"]}


def update_reservation_baggages(db, args):
    rsv = _reservation(db, args["reservation_id"])
    if rsv["status"] != "booked":
        raise BusinessRuleError(f"reservation {args['reservation_id']} is {rsv['status']}")
    total = args["total_baggages"]
    if total < rsv["total_baggages"]:
        raise BusinessRuleError("baggage count cannot be reduced")
    free = FREE_BAGS[rsv["cabin"]] * rsv["passengers"]
    charged_before = max(0, rsv["total_baggages"] - free)
    fee = (max(0, total - free) - charged_before) * BAG_FEE
    user = _user(db, rsv["user_id"])
    if user["balance"] < fee:
        raise BusinessRuleError("insufficient balance")
    user["balance"] = round(user["balance"] - fee, 2)
    rsv["total_baggages"] = total
    rsv["paid"] = round(rsv["paid"] + fee, 2)
    return {"reservation_id": args["reservation_id"], "total_baggages": total, "fee": fee}


def update_reservation_cabin(db, args):
    rsv = _reservation(db, args["reservation_id"])
    if rsv["status"] != "booked":
        raise BusinessRuleError(f"reservation {args['reservation_id']} is {rsv['status']}")
    new = args["cabin"]
    if new == rsv["cabin"]:
        raise BusinessRuleError(f"reservation is already in {new}")
    flight = db["flights"][rsv["flight_number"]]
    if flight["seats_available"][new] < rsv["passengers"]:
        raise BusinessRuleError(f"not enough {new} seats")
    diff = round(_fare(flight, new, rsv["passengers"]) - _fare(flight, rsv["cabin"], rsv["passengers"]), 2)
    user = _user(db, rsv["user_id"])
    if user["balance"] < diff:
        raise BusinessRuleError("insufficient balance")
    flight["seats_available"][rsv["cabin"]] += rsv["passengers"]
    flight["seats_available"][new] -= rsv["passengers"]
    user["balance"] = round(user["balance"] - diff, 2)
    rsv["cabin"] = new
    rsv["paid"] = round(rsv["paid"] + diff, 2)
    return {"reservation_id": args["reservation_id"], "cabin": new, "price_difference": diff}


def transfer_to_human_agents(db, args):
    return "Transfer successful"


EXECUTORS = {
    e.name: e
    for e in (
        ToolExecutor("get_user_details", get_user_details, read_only=True),
        ToolExecutor("get_reservation_details", get_reservation_details, read_only=True),
        ToolExecutor("search_direct_flight", search_direct_flight, read_only=True),
        ToolExecutor("book_reservation", book_reservation),
        ToolExecutor("cancel_reservation", cancel_reservation),
        ToolExecutor("update_reservation_baggages", update_reservation_baggages),
        ToolExecutor("update_reservation_cabin", update_reservation_cabin),
        ToolExecutor("transfer_to_human_agents", transfer_to_human_agents, read_only=True),
    )
}
