"""Tool effects for the mini-retail domain: a pet-supply store that also books shelter interviews."""

from __future__ import annotations

from .core import BusinessRuleError, ToolExecutor


def _order(db, order_id):
    order = db["orders"].get(order_id)
    if order is None:
        raise BusinessRuleError(f"order {order_id} not found")
    return order


def find_user_id_by_email(db, args):
    for user_id, user in sorted(db["users"].items()):
        if user["email"].lower() == args["email"].lower():
            return user_id
    raise BusinessRuleError(f"no user with email {args['email']}")


def get_user_details(db, args):
    user = db["users"].get(args["user_id"])
    if user is None:
        raise BusinessRuleError(f"user {args['user_id']} not found")
    return user


def get_order_details(db, args):
    return _order(db, args["order_id"])


def get_product_details(db, args):
    product = db["products"].get(args["product_id"])
    if product is None:
        raise BusinessRuleError(f"product {args['product_id']} not found")
    return product


def list_interview_slots(db, args):
    return [d for d, slot in sorted(db["interview_slots"].items()) if slot["available"]]


def cancel_pending_order(db, args):
    order = _order(db, args["order_id"])
    if order["status"] != "pending":
        raise BusinessRuleError(f"order {args['order_id']} is {order['status']}, only pending orders can be cancelled")
    order["status"] = "cancelled"
    order["cancel_reason"] = args["reason"]
    refund = round(sum(item["price"] for item in order["items"]), 2)
    order["refund"] = refund
    return {"order_id": args["order_id"], "status": "cancelled", "refund": refund}


def modify_pending_order_address(db, args):
    order = _order(db, args["order_id"])
    if order["status"] != "pending":
        raise BusinessRuleError(f"order {args['order_id']} is {order['status']}, its address cannot change")
    order["address"] = args["address"]
    return {"order_id": args["order_id"], "address": args["address"]}


def return_delivered_order_items(db, args):
    order = _order(db, args["order_id"])
    if order["status"] != "delivered":
        raise BusinessRuleError(f"order {args['order_id']} is {order['status']}, only delivered orders can be returned")
    by_id = {item["item_id"]: item for item in order["items"]}
    wanted = args["item_ids"]
    if not wanted:
        raise BusinessRuleError("item_ids must not be empty")
    missing = [i for i in wanted if i not in by_id]
    if missing:
        raise BusinessRuleError(f"items {missing} are not in order {args['order_id']}")
    if len(set(wanted)) != len(wanted):
        raise BusinessRuleError("duplicate item ids")
    refund = round(sum(by_id[i]["price"] for i in wanted), 2)
    order["status"] = "return requested"
    order["return_items"] = sorted(wanted)
    order["refund"] = refund
    order["refund_method"] = "gift card" if args.get("refund_to_gift_card") else "original payment"
    return {"order_id": args["order_id"], "refund": refund, "refund_method": order["refund_method"]}


def book_interview(db, args):
    date = args["date"]
    slot = db["interview_slots"].get(date)
    if slot is None or not slot["available"]:
        raise BusinessRuleError(f"no free interview slot on {date}")
    party = args.get("party_size", 1)
    if party < 1 or party > 4:
        raise BusinessRuleError("party_size must be between 1 and 4")
    slot["available"] = False
    booking_id = f"BK-{len(db['bookings']) + 1:04d}"
    db["bookings"][booking_id] = {"booking_id": booking_id, "date": date, "party_size": party}
    return {"booking_id": booking_id, "date": date}


def transfer_to_human_agents(db, args):
    return "Transfer successful"


EXECUTORS = {
    e.name: e
    for e in (
        ToolExecutor("find_user_id_by_email", find_user_id_by_email, read_only=True),
        ToolExecutor("get_user_details", get_user_details, read_only=True),
        ToolExecutor("get_order_details", get_order_details, read_only=True),
        ToolExecutor("get_product_details", get_product_details, read_only=True),
        ToolExecutor("list_interview_slots", list_interview_slots, read_only=True),
        ToolExecutor("cancel_pending_order", cancel_pending_order),
        ToolExecutor("modify_pending_order_address", modify_pending_order_address),
        ToolExecutor("return_delivered_order_items", return_delivered_order_items),
        ToolExecutor("book_interview", book_interview),
        ToolExecutor("transfer_to_human_agents", transfer_to_human_agents, read_only=True),
    )
}
